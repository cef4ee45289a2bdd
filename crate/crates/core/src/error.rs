use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive depth z = {0}")]
    NonPositiveDepth(f64),
    #[error("invalid depth {0}")]
    InvalidDepth(f64),
    #[error("invalid count: {0}")]
    InvalidCount(String),
    #[error("invalid radius {0}")]
    InvalidRadius(f64),
    #[error("model point set is empty")]
    EmptyModel,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("invalid k = {k} for {available} templates")]
    InvalidK { k: usize, available: usize },
    #[error("too few matches: need at least {needed}, got {got}")]
    TooFewMatches { needed: usize, got: usize },
    #[error("RANSAC found no consensus set with at least 4 inliers")]
    NoConsensus,
    #[error("no reference view produced a pose candidate")]
    NoCandidate,
    #[error("no candidates to cluster")]
    NoCandidates,
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("error list is empty")]
    EmptyErrors,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("frame ids without a match: {0:?}")]
    MissingFrames(Vec<u64>),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
