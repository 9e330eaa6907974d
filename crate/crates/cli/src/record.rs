//! Result records and plot-data emission.

use crate::config::hex_digest;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalar {
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stderr: Option<f64>,
}

/// Tabular output: one CSV per series.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.columns.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    /// The checked quantity (z-score, relative error, residual).
    pub measured: f64,
    /// Pass iff `|measured| < threshold` (and any extra condition in `detail`).
    pub threshold: f64,
    pub detail: String,
}

/// RNG and execution provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub workers: usize,
    /// How per-sample streams derive from the seed.
    pub streams: String,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub experiment: String,
    pub scalars: BTreeMap<String, Scalar>,
    pub series: BTreeMap<String, Series>,
    pub verdicts: Vec<Verdict>,
    pub provenance: Provenance,
    /// Hash of everything above except the wall clock.
    pub record_hash: String,
}

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("lookup error: unknown series `{name}` (available: {available})")]
    UnknownSeries { name: String, available: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed record {path}: {source}")]
    Malformed { path: PathBuf, source: serde_json::Error },
}

impl ResultRecord {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn compute_hash(&self) -> String {
        let mut canon = self.clone();
        canon.provenance.wall_clock_s = 0.0;
        canon.record_hash.clear();
        let value = serde_json::to_value(&canon).expect("record is always representable as JSON");
        hex_digest(value.to_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, RecordError> {
        let text = std::fs::read_to_string(path).map_err(|source| RecordError::Io { path: path.into(), source })?;
        serde_json::from_str(&text).map_err(|source| RecordError::Malformed { path: path.into(), source })
    }

    /// `record.json` plus one CSV per series in `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf, RecordError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| RecordError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let path = dir.join("record.json");
        let json = serde_json::to_string_pretty(self).expect("record serializes");
        std::fs::write(&path, json + "\n").map_err(io(&path))?;
        for name in self.series.keys() {
            emit_plot_data(self, name, dir)?;
        }
        Ok(path)
    }
}

/// Writes series `what` of `record` to `<dir>/<what>.csv`.
pub fn emit_plot_data(record: &ResultRecord, what: &str, dir: &Path) -> Result<PathBuf, RecordError> {
    let series = record.series.get(what).ok_or_else(|| RecordError::UnknownSeries {
        name: what.to_string(),
        available: record.series.keys().cloned().collect::<Vec<_>>().join(", "),
    })?;
    let path = dir.join(format!("{what}.csv"));
    let err = |source| RecordError::Io { path: path.clone(), source };
    std::fs::create_dir_all(dir).map_err(err)?;
    let file = std::fs::File::create(&path).map_err(err)?;
    series.write_csv(std::io::BufWriter::new(file)).map_err(err)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record() -> ResultRecord {
        let mut series = BTreeMap::new();
        let mut s = Series::new(&["x", "y"]);
        s.push(vec![1.0, 2.0]);
        series.insert("line".to_string(), s);
        let mut r = ResultRecord {
            config_hash: "abc".into(),
            experiment: "kpz".into(),
            scalars: BTreeMap::new(),
            series,
            verdicts: vec![],
            provenance: Provenance { seed: 1, workers: 1, streams: String::new(), wall_clock_s: 3.0 },
            record_hash: String::new(),
        };
        r.record_hash = r.compute_hash();
        r
    }

    #[test]
    fn hash_ignores_wall_clock() {
        let a = record();
        let mut b = a.clone();
        b.provenance.wall_clock_s = 99.0;
        assert_eq!(a.record_hash, b.compute_hash());
        b.scalars.insert("q".into(), Scalar { value: 1.0, stderr: None });
        assert_ne!(a.record_hash, b.compute_hash());
    }

    #[test]
    fn unknown_series_is_a_lookup_error() {
        let dir = tempfile::tempdir().unwrap();
        let e = emit_plot_data(&record(), "nope", dir.path()).unwrap_err();
        assert!(e.to_string().contains("unknown series `nope`"), "{e}");
        let p = emit_plot_data(&record(), "line", dir.path()).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        assert_eq!(text.lines().next(), Some("x,y"));
        assert_eq!(text.lines().count(), 2);
    }
}
