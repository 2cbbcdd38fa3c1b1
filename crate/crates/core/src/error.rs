use thiserror::Error;

/// Errors raised across the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("coordinate {coordinate} has zero variance")]
    ZeroVariance { coordinate: usize },

    #[error("moment matrix is ill-conditioned: Cholesky failed after jitter {jitter:e}")]
    IllConditionedMoments { jitter: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("candidate pool exhausted after {selected} samples")]
    PoolExhausted { selected: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
