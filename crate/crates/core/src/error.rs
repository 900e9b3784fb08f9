use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or incompatible input to an operation.
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("rejected configuration: {0}")]
    InvalidConfig(String),

    #[error("rejected dataset: {0}")]
    InvalidDataset(String),

    #[error("rejected batch: {0}")]
    InvalidBatch(String),

    /// Binary container or checkpoint could not be decoded.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Short machine-readable category name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "input",
            Error::InvalidConfig(_) => "config",
            Error::InvalidDataset(_) => "dataset",
            Error::InvalidBatch(_) => "batch",
            Error::Format { .. } => "format",
            Error::NonFiniteGradient { .. } => "non_finite_gradient",
            Error::Io { .. } => "io",
            Error::Internal(_) => "internal",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
