use thiserror::Error;

/// Errors produced by the simulation and analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mode map is not an isometry (max deviation {deviation:.3e})")]
    NotIsometric { deviation: f64 },

    #[error("mode label collision: {0}")]
    LabelCollision(String),

    #[error("unknown mode: {0}")]
    UnknownMode(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("photon number {requested} exceeds cap {cap}")]
    PhotonCap { requested: usize, cap: usize },

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("zero probability: {0}")]
    ZeroProbability(String),

    #[error("maximum-likelihood fit did not converge after {iterations} iterations (last relative improvement {last_improvement:.3e})")]
    NonConvergence {
        iterations: usize,
        last_improvement: f64,
    },

    #[error("malformed count data at line {line}: {message}")]
    MalformedData { line: usize, message: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
