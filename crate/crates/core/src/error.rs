use std::io;

/// Errors produced by every fallible operation in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes or layouts of the inputs are incompatible.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A tensor value is NaN or infinite.
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    /// A value lies outside the range accepted by the operation.
    #[error("value out of range: {0}")]
    Range(String),

    /// A parameter or configuration value is invalid.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file or stream header could not be parsed.
    #[error("malformed input: {0}")]
    Format(String),

    /// A payload ended before all declared bytes were read.
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    /// A Gram matrix was not positive definite.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Two histograms carry different total mass.
    #[error("mass mismatch: {0} vs {1}")]
    MassMismatch(f64, f64),

    /// An entropy-coded stream is inconsistent with the model decoding it.
    #[error("corrupted stream at word {position}: {reason}")]
    Corrupt { position: usize, reason: String },

    /// A pop was attempted on an exhausted coder state.
    #[error("coder underflow: stream exhausted")]
    Underflow,

    /// A stateful operation was invoked out of order.
    #[error("invalid state: {0}")]
    State(String),

    /// An operation received an empty collection.
    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
