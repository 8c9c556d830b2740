use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed container key {key:?}: {reason}")]
    MalformedKey { key: String, reason: &'static str },

    #[error("invalid container: {0}")]
    InvalidContainer(&'static str),

    #[error("invalid session: {0}")]
    InvalidSession(&'static str),

    #[error("records are not sorted by (client, timestamp) at index {index}")]
    UnsortedInput { index: usize },

    #[error("sequence database is empty")]
    EmptyDatabase,

    #[error("mining exceeded its budget of {budget_ms} ms")]
    MiningBudgetExceeded { budget_ms: u64 },

    #[error("mining was cancelled")]
    MiningCancelled,

    #[error("pattern {pattern} terminates at an internal node of its tree")]
    PatternEndsInternally { pattern: String },

    #[error("metastore capacity of {capacity} patterns exceeded ({stored})")]
    CapacityExceeded { capacity: usize, stored: usize },

    #[error("prefetch context is no longer live")]
    DeadContext,

    #[error("entry of {size} bytes does not fit a space of {capacity} bytes")]
    EntryLargerThanSpace { size: usize, capacity: usize },

    #[error("backstore write failed for {key}: {reason}")]
    BackstoreWriteFailed { key: String, reason: String },

    #[error("sequence pool of {requested} items does not fit a universe of {available} containers")]
    PoolTooLargeForUniverse { requested: usize, available: usize },

    #[error("invalid configuration for `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
