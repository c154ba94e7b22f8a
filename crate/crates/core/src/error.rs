use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates a precondition (wrong shape,
    /// out-of-range value, missing entry).
    #[error("invalid argument: {0}")]
    Argument(String),
    /// The data itself is unusable (negative counts, non-finite entries,
    /// all-zero input where signal is required).
    #[error("invalid data: {0}")]
    Data(String),
    /// An iterative procedure produced non-finite values or diverged.
    #[error("numerical failure: {0}")]
    Numerical(String),
    /// An object was used outside its valid lifecycle (e.g. a gradient
    /// tape replayed against the wrong network).
    #[error("invalid state: {0}")]
    State(String),
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub(crate) fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }
}
