use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum MosError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("study definition: {0}")]
    Study(String),
    #[error("rating log: {0}")]
    Log(String),
    #[error("unknown pair {0}")]
    UnknownPair(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl MosError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = MosError> = std::result::Result<T, E>;
