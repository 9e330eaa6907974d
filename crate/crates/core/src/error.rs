use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Invalid construction parameters (grid size, mode count, sample count).
    #[error("configuration error: {0}")]
    Config(String),

    /// A physical parameter outside its admissible range.
    #[error("parameter error: {name} = {value}: {reason}")]
    Parameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// The operation is not defined on this surface.
    #[error("operation `{op}` is not supported on the {surface}")]
    UnsupportedSurface { op: &'static str, surface: &'static str },

    /// Pointwise kernel evaluation on the diagonal.
    #[error("kernel evaluated on the diagonal (x = y); use a circle average instead")]
    Diagonal,

    /// Requested scale is below what the grid or cutoff resolves.
    #[error("scale {scale} is below the resolution limit {limit}")]
    Resolution { scale: f64, limit: f64 },

    /// Insertion data violates the Seiberg bounds or another domain condition.
    #[error("domain error: {0}")]
    Domain(String),

    /// A point is outside the region where the chart computations are trusted.
    #[error("point {re}+{im}i is outside the chart guard region")]
    ChartGuard { re: f64, im: f64 },

    /// An iteration failed to reach its tolerance.
    #[error("no convergence: {0}")]
    Convergence(String),

    /// A Monte Carlo contribution was NaN or infinite.
    #[error("non-finite Monte Carlo contribution at sample {sample}")]
    NonFinite { sample: usize },

    /// Unknown series, experiment, or field name.
    #[error("lookup error: unknown {kind} `{name}`")]
    Lookup { kind: &'static str, name: String },
}

pub type Result<T> = std::result::Result<T, Error>;
