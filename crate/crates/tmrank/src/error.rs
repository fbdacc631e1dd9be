//! Crate-wide error type.

use std::path::PathBuf;

/// Errors returned by `tmrank`.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("empty collection")]
    EmptyCollection,

    #[error("empty bitext: no (query, relevant document) pairs")]
    EmptyBitext,

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty query")]
    EmptyQuery,

    #[error("empty sequence")]
    EmptySequence,

    #[error("duplicate doc id: {0}")]
    DuplicateDocId(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parameter out of range: {0}")]
    InvalidParameter(String),

    #[error("{path}:{line}: {msg}")]
    ParseLine {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("bad file format in {path}: {msg}")]
    BadFormat { path: String, msg: String },

    #[error("unknown feature name: {0}")]
    UnknownFeature(String),

    #[error("no relevant candidates in any query")]
    NoRelevantCandidates,

    #[error("mismatched query sets across seeds")]
    MismatchedQuerySets,

    #[error("need at least 2 common queries for a paired test, got {0}")]
    TooFewPairs(usize),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse_line(path: impl AsRef<std::path::Path>, line: usize, msg: impl Into<String>) -> Self {
        Error::ParseLine {
            path: path.as_ref().display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    pub fn bad_format(path: impl AsRef<std::path::Path>, msg: impl Into<String>) -> Self {
        Error::BadFormat {
            path: path.as_ref().display().to_string(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
