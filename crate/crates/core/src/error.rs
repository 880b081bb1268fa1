use alloc::string::String;

/// Errors produced by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// Input data (scores, probabilities, labels) is malformed.
    #[error("invalid data: {0}")]
    Data(String),
    /// A function was evaluated outside its mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A configuration is internally inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A numerical procedure failed to reach its tolerance or produced a non-finite value.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// Gradient descent produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
