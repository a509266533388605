use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command line to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("corpus is empty; nothing to index")]
    EmptyCorpus,
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("duplicate query id `{0}`")]
    DuplicateQueryId(String),
    #[error("unknown document id `{0}`")]
    UnknownDoc(String),
    #[error("vector length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("adjacency matrix is not a valid symmetric co-occurrence matrix: {0}")]
    InvalidAdjacency(String),
    #[error("query `{0}` has no terms")]
    EmptyQuery(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("no query has both a positive and a negative candidate")]
    NoUsableQueries,
    #[error("cannot split {queries} queries into {folds} folds")]
    TooFewQueries { queries: usize, folds: usize },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("gradient check failed for {0}")]
    GradientMismatch(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::NonFinite(_) | Error::GradientMismatch(_) => ErrorKind::Numerical,
            _ => ErrorKind::Data,
        }
    }
}
