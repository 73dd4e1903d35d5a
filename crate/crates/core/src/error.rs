use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An input violated a precondition (lengths, ranges, non-finite values).
    #[error("domain error: {0}")]
    Domain(String),

    /// A memory budget cannot be honoured.
    #[error("capacity error: {what} requires {required} bytes but only {available} bytes are available")]
    Capacity {
        what: String,
        required: u64,
        available: u64,
    },

    /// The LP behind box sizing failed to produce a feasible point.
    #[error("solver error: {0}")]
    Solver(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
