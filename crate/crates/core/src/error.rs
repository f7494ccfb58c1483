use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("matrix is not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotSpd { min_eigenvalue: f64 },

    #[error("rotation axis {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("iteration did not converge in {0}")]
    NoConvergence(&'static str),

    #[error("direction field vanishes at a state with positive energy")]
    ZeroDirectionField,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("target spectral radius {target} unreachable after {halvings} halvings of R (base radius {base})")]
    Unreachable { target: f64, base: f64, halvings: usize },

    #[error("parameter sampling exhausted after {0} attempts")]
    SamplingExhausted(usize),

    #[error("validation grid is empty")]
    EmptyGrid,

    #[error("horizon must be at least 1")]
    InvalidHorizon,

    #[error("retry budget exhausted for {family} instance {index} after {attempts} attempts")]
    RetryBudgetExhausted {
        family: String,
        index: usize,
        attempts: usize,
    },

    #[error("I/O failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("schema version mismatch: file has {found}, expected {expected}")]
    SchemaVersionMismatch { found: u32, expected: u32 },

    #[error("fixture checksum mismatch")]
    ChecksumMismatch,

    #[error("malformed document: {0}")]
    Parse(String),

    #[error("policy failure: {0}")]
    PolicyFailure(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty input")]
    EmptyInput,
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
