use thiserror::Error;

pub type Result<T, E = HarError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("vocabulary mismatch: {0}")]
    Vocabulary(String),

    #[error("model is frozen and cannot be updated")]
    Frozen,

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HarError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        HarError::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        HarError::InvalidArgument(msg.into())
    }
}
