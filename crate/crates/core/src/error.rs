use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid base {byte:?} at position {position}")]
    InvalidBase { position: usize, byte: char },

    #[error("corpus is empty after cleaning")]
    EmptyCorpus,

    #[error("sentinel index {0} exceeds the 125 available sentinels")]
    SentinelExhausted(usize),

    #[error("shape mismatch: {op} got {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("loss is undefined: every target position is ignored")]
    UndefinedLoss,

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("non-finite loss at step {0}")]
    NonFiniteLoss(usize),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }
}
