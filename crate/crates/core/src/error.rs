use thiserror::Error;

pub type Result<T, E = ChimpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ChimpError {
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: measure has n = {expected}, input has {got} entries")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("number of sources must be in 1..={max}, got {n}")]
    SourceCount { n: usize, max: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("k = {k} out of range 1..={n}")]
    KOutOfRange { k: usize, n: usize },

    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),

    #[error("tie group of {size} equal inputs exceeds the limit of {max}")]
    TieGroupTooLarge { size: usize, max: usize },

    #[error("n = {n} is too large for factorial expansion (limit {max})")]
    FactorialGuard { n: usize, max: usize },

    #[error("measure is not a valid capacity: {0}")]
    InvalidMeasure(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("forward cache does not belong to this input")]
    StaleCache,

    #[error("numeric failure at epoch {epoch}, sample {sample}: {detail}")]
    Numeric {
        epoch: usize,
        sample: usize,
        detail: String,
    },

    #[error("{0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
