use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("template has no samples")]
    EmptyTemplate,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("vector has a non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("vector must have at least one dimension")]
    EmptyVector,
    #[error("samples belong to different templates ({first} and {other})")]
    TemplateMismatch { first: u64, other: u64 },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("metadata error on line {line}: {message}")]
    Metadata { line: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("input is empty")]
    EmptyInput,
    #[error("invalid stopping rule: {0}")]
    InvalidStop(String),
    #[error("invalid k={k} for {n} points")]
    InvalidK { k: usize, n: usize },
    #[error("feature set is empty")]
    EmptySet,

    #[error("{0} class has no training samples")]
    EmptyClass(&'static str),
    #[error("training feature {index} is not finite")]
    BadFeature { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("association sets overlap at sample {0}")]
    OverlappingSets(usize),

    #[error("item {0} has no ground-truth label")]
    MissingLabel(u64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("score table has no mated probes")]
    NoMatedProbes,
    #[error("score table has no non-mated probes (closed set)")]
    NotOpenSet,
    #[error("gallery contains subject {0} more than once")]
    DuplicateGallerySubject(u32),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
