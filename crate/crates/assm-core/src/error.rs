use alloc::string::String;
use core::fmt;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Incompatible tensor extents; carries a description naming both shapes.
    Dimension(String),
    /// A value violated a domain constraint (e.g. nonpositive time step).
    Domain(String),
    /// Invalid configuration value.
    Config(String),
    /// Numerical failure at a specific sequence position.
    Numeric { position: usize, what: String },
    /// Required forward intermediates were not retained.
    State(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(msg) => write!(f, "dimension error: {msg}"),
            Error::Domain(msg) => write!(f, "domain error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Numeric { position, what } => {
                write!(f, "numeric error at position {position}: {what}")
            }
            Error::State(msg) => write!(f, "state error: {msg}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
