use clap::{Parser, Subcommand};
use lcft_cli::{emit_plot_data, exit, run, ConfigError, ExperimentConfig, ExperimentKind, ResultRecord, RunError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Run and verify lcft experiments from TOML configs.
///
/// Worker count comes from `LCFT_WORKERS` (default: available parallelism).
#[derive(Parser)]
#[command(name = "lcft", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and run a config; writes record.json and series CSVs.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Check a config without computing anything.
    Validate { config: PathBuf },
    /// Write one series of a record as CSV.
    EmitPlot {
        record: PathBuf,
        series: String,
        /// Directory for the CSV (default: next to the record).
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// List experiment kinds.
    ListExperiments,
}

fn load(path: &Path) -> Result<ExperimentConfig, ExitCode> {
    ExperimentConfig::load(path).map_err(|e| {
        eprintln!("{e}");
        ExitCode::from(exit::VALIDATION as u8)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{:<16} {}", k.name(), k.summary());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match cfg.validate() {
                Ok(_) => {
                    println!("ok {} {}", cfg.experiment, cfg.hash());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(exit::VALIDATION as u8)
                }
            }
        }
        Command::Run { config, out } => {
            let cfg = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let record = match run(&cfg) {
                Ok(r) => r,
                Err(RunError::Config(e @ ConfigError::Invalid(_))) | Err(RunError::Config(e)) => {
                    eprintln!("{e}");
                    return ExitCode::from(exit::VALIDATION as u8);
                }
                Err(e @ RunError::Compute(_)) => {
                    eprintln!("{e}");
                    return ExitCode::from(exit::COMPUTE as u8);
                }
            };
            let dir = out.or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| {
                PathBuf::from("lcft-out").join(format!("{}-{}", cfg.experiment, &record.config_hash[..12]))
            });
            match record.write(&dir) {
                Ok(path) => println!("record {}", path.display()),
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(exit::COMPUTE as u8);
                }
            }
            for v in &record.verdicts {
                let tag = if v.pass { "PASS" } else { "FAIL" };
                println!("{tag} {}: {:.4e} (threshold {:.4e}) {}", v.name, v.measured, v.threshold, v.detail);
            }
            println!("hash {}", record.record_hash);
            if record.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(exit::TOLERANCE as u8)
            }
        }
        Command::EmitPlot { record, series, out } => {
            let rec = match ResultRecord::load(&record) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(exit::VALIDATION as u8);
                }
            };
            let dir = out.unwrap_or_else(|| record.parent().map(Path::to_path_buf).unwrap_or_default());
            match emit_plot_data(&rec, &series, &dir) {
                Ok(path) => {
                    println!("{}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(exit::VALIDATION as u8)
                }
            }
        }
    }
}
