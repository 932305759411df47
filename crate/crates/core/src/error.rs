//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("vocabulary size {size} below minimum {min}")]
    VocabTooSmall { size: u32, min: u32 },

    #[error("document length {doc_len} cannot hold {pairs} key-value pairs ({} tokens)", pairs * 2)]
    DocTooShort { doc_len: usize, pairs: usize },

    #[error("token id {id} outside vocabulary of size {size}")]
    TokenOutOfRange { id: u32, size: u32 },

    #[error("trajectory is not well-formed")]
    NotWellFormed,

    #[error("reward over an empty record list is undefined")]
    EmptyRecords,

    #[error("group has {got} rollouts; at least 2 are required")]
    GroupTooSmall { got: usize },

    #[error("empty {0} set")]
    EmptyDataset(&'static str),

    #[error("non-finite importance ratio at rollout {rollout}, token {token}")]
    NonFiniteRatio { rollout: usize, token: usize },

    #[error("gold trajectory for episode {index} is malformed")]
    BadGold { index: usize },

    #[error("dataset header mismatch: {0}")]
    HeaderMismatch(String),

    #[error("bad episode: {0}")]
    BadEpisode(String),

    #[error("gradient check failed: {0}")]
    GradCheckFailed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Error {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for usage/config/data problems,
    /// 2 for a failed numeric check.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::GradCheckFailed(_) => 2,
            _ => 1,
        }
    }
}
