use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A size parameter (Hadamard order, image side, row count) is out of range.
    #[error("size error: {0}")]
    Size(String),
    /// Operand shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// Noise at a finite SNR was requested for an all-zero signal.
    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),
    /// A linear operator and its claimed adjoint disagree.
    #[error("operator error: {0}")]
    Operator(String),
    /// A NaN or infinity showed up where finite values are required.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("config error: {0}")]
    Config(String),
    /// Input data violates a precondition (range, emptiness, counts).
    #[error("data error: {0}")]
    Data(String),
    /// A byte stream does not follow the expected file format.
    #[error("format error: {0}")]
    Format(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    /// A statistic is undefined because an input has zero variance.
    #[error("degenerate statistics: {0}")]
    DegenerateStatistics(String),
}

pub type Result<T> = core::result::Result<T, Error>;
