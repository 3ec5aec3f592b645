use thiserror::Error;

/// Errors raised across the tomography pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("scheme mismatch: {0}")]
    SchemeMismatch(String),

    #[error("singular matrix in QR factorization")]
    SingularMatrix,

    #[error("degenerate construction: trace {0:e} below threshold")]
    DegenerateConstruction(f64),

    #[error("log-likelihood evaluated to NaN")]
    NanLikelihood,

    #[error("grid too narrow: probability mass deficit {deficit:e} at theta={theta:.4}")]
    GridTooNarrow { deficit: f64, theta: f64 },

    #[error("trace too short: {0}")]
    TraceTooShort(String),

    #[error("calibration: {0}")]
    Calibration(String),

    #[error("no sync markers")]
    NoMarkers,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
