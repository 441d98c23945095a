use thiserror::Error;

/// Errors produced by the engine.
#[derive(Debug, Error)]
pub enum Error {
    /// Array or contour dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// An argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A stored tensor does not match the shape derived from the config.
    #[error("checkpoint mismatch at `{path}`: expected shape {expected:?}, found {found:?}")]
    CheckpointMismatch {
        path: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    /// A gradient became NaN or infinite; names the first offending parameter.
    #[error("non-finite gradient in `{0}`")]
    NonFiniteGradient(String),

    /// File contents could not be interpreted.
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
