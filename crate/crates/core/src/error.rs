use alloc::string::String;
use alloc::vec::Vec;

/// Errors produced by the numerical core and the fusion pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("no common layer structure in the pool (most dissimilar models: `{first}` and `{second}`)")]
    NoCommonStructure { first: String, second: String },
    #[error("trailing components disagree in output width: {}", .models.join(", "))]
    TailMismatch { models: Vec<String> },
    #[error("models `{first}` and `{second}` do not share the same input encoder")]
    EncoderMismatch { first: String, second: String },
    #[error("AUC is undefined: {0}")]
    Undefined(String),
    #[error("partner selection needs at least two tasks")]
    NotApplicable,
    #[error("task mismatch: {0}")]
    TaskMismatch(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}, task `{task}`")]
    NonFiniteLoss { epoch: usize, batch: usize, task: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! dim_err {
    ($($arg:tt)*) => {
        $crate::error::Error::Dimension(alloc::format!($($arg)*))
    };
}
pub(crate) use dim_err;
