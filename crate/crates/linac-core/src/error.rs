//! Crate-wide error type.

/// Errors produced by tensor, network, training, and attack operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor had the wrong shape for the requested operation.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },

    /// A NaN or infinity appeared where only finite values are allowed.
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    /// A parameter value outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed serialized data (tensor files, checkpoints, reports).
    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Convenience constructor for [`Error::ShapeMismatch`].
    pub fn shape(context: &'static str, expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            context,
            expected: expected.into(),
            got: got.into(),
        }
    }
}
