//! Crate-wide error type.

/// Errors produced by mask construction, attention kernels, schedules and
/// the simulator.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Tensor or mask dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A parameter is out of its documented range.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A mask violates a structural requirement (e.g. an empty row).
    #[error("invalid mask: {0}")]
    InvalidMask(String),

    /// A non-finite value was encountered, or a runtime self-check failed.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A cached statistic was read before any capture step populated it.
    #[error("cache miss: {0}")]
    CacheMiss(String),

    /// An experiment configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
