//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the search engine.
#[derive(Debug, Error)]
pub enum Error {
    /// A cell-space description violated its invariants.
    #[error("invalid cell spec: {0}")]
    InvalidSpec(String),

    /// A genotype did not satisfy the invariants of its spec.
    #[error("invalid genotype: {0}")]
    InvalidGenotype(String),

    /// A continuous vector had the wrong shape for its spec.
    #[error("invalid continuous architecture: {0}")]
    InvalidContinuous(String),

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value at component {index}: {context}")]
    NonFinite { index: usize, context: String },

    /// Text parsing failed.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Two objects built against different cell specs were combined.
    #[error("spec mismatch: {0}")]
    SpecMismatch(String),

    /// An operation that needs archive entries was called on an empty archive.
    #[error("archive is empty")]
    EmptyArchive,

    /// Push was attempted on an archive already at capacity.
    #[error("archive is full (capacity {capacity})")]
    ArchiveFull { capacity: usize },

    /// An index was outside the valid range.
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    /// A configuration value was outside its valid range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Batch or weight dimensions disagreed.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Loss or a gradient became non-finite during training.
    #[error("non-finite training value: {0}")]
    NonFiniteLoss(String),

    /// An architecture evaluator failed.
    #[error("evaluator failed: {0}")]
    Evaluator(String),

    /// Exhaustive enumeration was requested on a space above the cap.
    #[error("search space too large to enumerate: {count} genotypes (cap {cap})")]
    SpaceTooLarge { count: u128, cap: u128 },

    /// A weight checkpoint was produced for a different spec.
    #[error("checkpoint spec hash mismatch: file {found:#018x}, expected {expected:#018x}")]
    SpecHashMismatch { found: u64, expected: u64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
