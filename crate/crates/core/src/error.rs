//! Crate-wide error type.

/// Errors surfaced by any connflow module.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/layer shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A caller-supplied value is invalid (labels out of range, bad lengths, ...).
    #[error("invalid input: {0}")]
    Input(String),
    /// A configuration value is out of its documented domain.
    #[error("invalid config: {0}")]
    Config(String),
    /// An operation was called in a state it does not support.
    #[error("invalid state: {0}")]
    State(String),
    /// Too few examples to compute a statistic.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Training(String),
    /// A binary file does not match its documented layout.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    /// Stored checksum does not match recomputed contents.
    #[error("checksum mismatch: {0}")]
    Checksum(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
