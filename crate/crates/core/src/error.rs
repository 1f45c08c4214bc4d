use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("i/o error on {path}: {source}")]
    IoAt {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numerical fault: {0}")]
    NumericalFault(String),

    #[error("unsupported numeral `{token}` (values must be below 10^9)")]
    UnsupportedNumeral { token: String },

    #[error("character {ch:?} at offset {offset} is not in the vocabulary")]
    OutOfVocabulary { ch: char, offset: usize },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("{} clip(s) have problems:\n  {}", .0.len(), .0.join("\n  "))]
    Itemized(Vec<String>),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io_at(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::IoAt {
            path: path.into(),
            source,
        }
    }
}
