use thiserror::Error;

/// Failure modes of the numeric kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite entry at flat index {index}")]
    NonFinite { index: usize },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("index {index} out of range (valid: 1..={len})")]
    Bounds { index: usize, len: usize },

    #[error("pair ({i}, {j}): {source}")]
    Pair {
        i: usize,
        j: usize,
        #[source]
        source: Box<GeomError>,
    },
}

pub type Result<T, E = GeomError> = std::result::Result<T, E>;
