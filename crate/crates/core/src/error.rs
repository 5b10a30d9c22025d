use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the survival library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a finite number")]
    UnparseableCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column `{column}`: observed time {value} is negative")]
    NegativeTime {
        row: usize,
        column: String,
        value: f64,
    },

    #[error("row {row}, column `{column}`: event indicator {value} is not 0 or 1")]
    InvalidEvent {
        row: usize,
        column: String,
        value: f64,
    },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel matrix: {0}")]
    KernelMatrix(String),

    #[error("point is not indexed by the precomputed kernel")]
    UnindexedPoint,

    #[error("index {index} out of range for {len} subjects")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("observed time {0} is not a point of the time grid")]
    OffGrid(f64),

    #[error("censoring-rate tuning did not reach target {target} (realized {realized}) in {steps} bisection steps")]
    CensoringTuning {
        target: f64,
        realized: f64,
        steps: usize,
    },

    #[error("no comparable pairs for the concordance index")]
    NoComparablePairs,

    #[error("survival-time estimate is infinite; map it to a finite time before scoring")]
    InfiniteEstimate,

    #[error("model file: {0}")]
    Model(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
