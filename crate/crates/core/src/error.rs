use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Caller supplied arguments that violate an operation's preconditions.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("corrupt file {path} at byte offset {offset}: {message}")]
    Corruption {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("integrity error in {path}: {message}")]
    Integrity { path: PathBuf, message: String },

    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A sampled partition cannot supply an episode.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: u64 },

    /// A statistic is not defined for the given input (e.g. AUC with one class).
    #[error("undefined result: {0}")]
    Undefined(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
