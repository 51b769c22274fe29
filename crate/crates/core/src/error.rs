use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no rows")]
    NoRows,

    #[error("dataset empty after cleaning")]
    EmptyAfterCleaning,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{malformed} malformed lines out of {total} exceeds tolerance of {allowed}")]
    TooManyMalformed {
        malformed: usize,
        total: usize,
        allowed: usize,
    },

    #[error("unmatched raw label {0:?}")]
    UnmatchedLabel(String),

    #[error("class {0} not present in dataset")]
    ClassAbsent(String),

    #[error("class {class} has {size} samples; SMOTE needs at least 2 (use random oversampling instead)")]
    ClassTooSmall { class: String, size: usize },

    #[error("no splits anywhere")]
    NoSplits,

    #[error("model format version {found} is not supported (expected {expected})")]
    FormatVersion { found: u64, expected: u64 },

    #[error("fitting {spec} failed: {source}")]
    Fit {
        spec: String,
        #[source]
        source: Box<Error>,
    },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParam(msg.into())
}
