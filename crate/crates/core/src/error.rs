use thiserror::Error;

/// Crate-wide error type. Variant names follow the failure they signal.
#[derive(Debug, Error)]
pub enum Error {
    #[error("zero vector: L2 norm below the degeneracy threshold")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid window config: {0}")]
    InvalidWindowConfig(String),
    #[error("distillation weight is positive but no teacher embeddings are present")]
    MissingTeacher,
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("stale forward cache: {0}")]
    StaleCache(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("invalid split fraction {0}: must be in (0, 1)")]
    InvalidFraction(f64),
    #[error("empty split: {0}")]
    EmptySplit(String),
    #[error("non-finite gradient: {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("missing retrieval pair for query {query}")]
    MissingPair { query: usize },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
