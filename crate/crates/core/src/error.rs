use std::path::PathBuf;

use thiserror::Error;

/// Coarse failure class, used by front ends to pick an exit status.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Invariant,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed input: {message}")]
    Format { path: PathBuf, message: String },
    #[error("raw file holds {bytes} bytes, which is not a whole number of cf32 samples")]
    Truncated { bytes: u64 },
    #[error("metadata declares {declared} samples but the payload holds {actual}")]
    LengthMismatch { declared: u64, actual: u64 },
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("recording holds no samples")]
    EmptyRecording,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Config,
            Error::Invariant(_) => ErrorKind::Invariant,
            _ => ErrorKind::Io,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(message: impl Into<String>) -> Result<T> {
    Err(Error::Config(message.into()))
}
