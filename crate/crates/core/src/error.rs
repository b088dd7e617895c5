use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label value {0} is not one of -1, 0, +1")]
    InvalidLabel(i64),

    #[error("label fraction {0} outside [0, 1]")]
    FractionOutOfRange(f64),

    #[error("label index {index} out of bounds for stream of length {len}")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("empty window [{start}, {end}) contains no scorable steps")]
    EmptyWindow { start: usize, end: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("labeled set contains a single class; need at least one sample of each")]
    SingleClass,

    #[error("config: {0}")]
    Config(String),

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error("csv {path}: {msg}")]
    Csv { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    CsvLib(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }
}
