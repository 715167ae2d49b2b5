use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate pair (user {user}, item {item})")]
    DuplicatePair { user: String, item: String },
    #[error("index ({user}, {item}) outside a {n_users}x{n_items} grid")]
    OutOfRange {
        user: usize,
        item: usize,
        n_users: usize,
        n_items: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
