use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{what} {value} out of range [0, {max}]")]
    OutOfRange { what: &'static str, value: u64, max: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A violated internal contract. Seeing this means a bug, not bad input.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unknown token `{0}`")]
    UnknownToken(String),

    #[error("empty hypothesis: latency is undefined")]
    EmptyHypothesis,

    #[error("input error: {0}")]
    Input(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }
}
