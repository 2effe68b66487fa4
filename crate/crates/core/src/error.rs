use thiserror::Error;

/// Errors produced by routing, modeling and simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OeaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("row {row}: {reason}")]
    InvalidScores { row: usize, reason: String },

    #[error("invalid routing config: {0}")]
    InvalidConfig(String),

    #[error("token {token}: selected scores sum to {sum:e}, cannot renormalize")]
    DegenerateWeights { token: usize, sum: f64 },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("undefined ratio: reference latency is zero")]
    UndefinedRatio,

    #[error("{0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for OeaError {
    fn from(e: std::io::Error) -> Self {
        OeaError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for OeaError {
    fn from(e: serde_json::Error) -> Self {
        OeaError::Format(e.to_string())
    }
}

impl From<csv::Error> for OeaError {
    fn from(e: csv::Error) -> Self {
        OeaError::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, OeaError>;
