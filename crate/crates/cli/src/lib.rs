//! Config-driven experiment runner for `lcft`.

pub mod config;
pub mod record;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind, ValidationError};
pub use record::{emit_plot_data, RecordError, ResultRecord};
pub use run::{run, RunError};

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const TOLERANCE: i32 = 1;
    pub const VALIDATION: i32 = 2;
    pub const COMPUTE: i32 = 3;
}
