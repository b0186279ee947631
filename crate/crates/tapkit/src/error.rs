//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TapError>;

#[derive(Debug, Error)]
pub enum TapError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed container: {0}")]
    MalformedWav(String),

    #[error("unsupported wav: {0}")]
    UnsupportedWav(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("signal too short: need at least {need} samples, got {got}")]
    SignalTooShort { need: usize, got: usize },

    #[error("zero-power {0}")]
    ZeroPower(String),

    #[error("degenerate parameter: {0}")]
    DegenerateParameter(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("frame-grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("insufficient split: {0}")]
    InsufficientSplit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
