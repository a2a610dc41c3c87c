use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("function `{function}` is certified to derivative order {certified}, but order {required} is required")]
    InsufficientSmoothness { function: String, certified: usize, required: usize },

    #[error("Picard iteration failed on path {path} at level {level}: {reason}")]
    SolveFailed { path: u64, level: usize, reason: String },

    #[error("baseline mismatch: {0}")]
    BaselineMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
