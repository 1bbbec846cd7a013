use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate box: {0}")]
    DegenerateBox(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("index {index} out of range for length {len}")]
    Index { index: usize, len: usize },

    #[error("numeric divergence at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Shape { expected: expected.to_string(), actual: actual.to_string() }
    }
}
