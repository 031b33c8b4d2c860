use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A masked reduction was asked to operate on an empty support set.
    #[error("empty support: {0}")]
    EmptySupport(String),
    /// A file did not conform to its declared format. Names the offending field.
    #[error("format error in {path}: bad {field}: {detail}")]
    Format {
        path: String,
        field: &'static str,
        detail: String,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// A memory scenario would allocate past the configured cap.
    #[error("budget exceeded: scenario needs {required} bytes, cap is {cap}")]
    BudgetExceeded { required: u64, cap: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
