use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("process is not stationary: spectral radius {0} >= 1")]
    NotStationary(f64),

    #[error("thinning bound overflow: {0}")]
    BoundOverflow(f64),

    #[error("intensity is nonpositive at t = {0}")]
    NonPositiveIntensity(f64),

    #[error("too few anchor points for mark {mark}: {count} (need {required})")]
    TooFewAnchors {
        mark: usize,
        count: usize,
        required: usize,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("prior rejection cap exceeded after {0} tries")]
    RejectionCap(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
