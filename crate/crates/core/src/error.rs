use thiserror::Error;

/// Errors produced by the task, aggregation, fault and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty batch requested")]
    EmptyBatchRequested,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty gradient set")]
    EmptyGradientSet,
    #[error("krum cardinality violated: need 2b + 2 < m, got b = {b}, m = {m}")]
    KrumCardinality { b: usize, m: usize },
    #[error("nothing to aggregate: trim parameter b = {b} must be < m = {m}")]
    NothingToAggregate { b: usize, m: usize },
    #[error("cannot partition {points} points into {shards} shards")]
    Partition { points: usize, shards: usize },
    #[error("{q} faulty workers requested but only {m} workers exist")]
    TooManyFaulty { q: usize, m: usize },
    #[error("fault index {index} out of range for {m} candidates")]
    FaultIndex { index: usize, m: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("unknown task kind `{0}`")]
    UnknownTask(String),
    #[error("invalid configuration: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidConfig {
        field,
        reason: reason.into(),
    }
}
