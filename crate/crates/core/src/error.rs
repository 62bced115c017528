use thiserror::Error;

/// Errors raised by the numerical core.
///
/// Verification failures are not errors; they are reported as findings in
/// the respective report types.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("time {t} is outside the stored noise horizon [{lo}, {hi}]")]
    OutOfHorizon { t: f64, lo: f64, hi: f64 },

    #[error("state {point:?} lies outside the state box")]
    Domain { point: Vec<f64> },

    #[error("operation undefined on an empty cell set: {0}")]
    EmptySet(&'static str),

    #[error("cell sets live on different partitions")]
    PartitionMismatch,

    #[error("precondition violated: {0}")]
    Misuse(String),

    #[error("random set has no realization for seed {0}")]
    MissingRealization(u64),

    #[error("inverse flow did not converge (residual {residual:e})")]
    InverseDiverged { residual: f64 },

    #[error("i/o failure: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable machine-readable reason code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::OutOfHorizon { .. } => "out-of-horizon",
            Error::Domain { .. } => "domain",
            Error::EmptySet(_) => "empty-set",
            Error::PartitionMismatch => "partition-mismatch",
            Error::Misuse(_) => "misuse",
            Error::MissingRealization(_) => "missing-realization",
            Error::InverseDiverged { .. } => "inverse-diverged",
            Error::Io(_) => "io",
        }
    }
}
