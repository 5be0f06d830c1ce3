use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum MptError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument for {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward pass: {0}")]
    Backward(String),

    #[error("invalid configuration: {key}: {detail}")]
    Config { key: String, detail: String },

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = MptError> = std::result::Result<T, E>;

impl MptError {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        MptError::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        MptError::InvalidArgument {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, detail: impl Into<String>) -> Self {
        MptError::Config {
            key: key.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        MptError::Io {
            path: path.into(),
            source,
        }
    }
}
