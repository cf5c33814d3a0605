use std::fmt;
use std::io;

/// Errors raised by the IO and CLI layer.
#[derive(Debug)]
pub enum ToolError {
    /// Malformed tensor or checkpoint file; `offset` is the byte position
    /// at which decoding failed.
    Format { offset: u64, what: String },
    /// Underlying filesystem or stream failure.
    Io(io::Error),
    /// Bad config file contents or invalid flag values.
    Config(String),
    /// Command-line usage error (unknown value, missing argument).
    Usage(String),
    /// Error bubbled up from the numerical core.
    Core(assm_core::Error),
}

impl fmt::Display for ToolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ToolError::Format { offset, what } => {
                write!(f, "format error at byte {offset}: {what}")
            }
            ToolError::Io(e) => write!(f, "io error: {e}"),
            ToolError::Config(msg) => write!(f, "config error: {msg}"),
            ToolError::Usage(msg) => write!(f, "usage error: {msg}"),
            ToolError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ToolError {}

impl From<io::Error> for ToolError {
    fn from(e: io::Error) -> Self {
        ToolError::Io(e)
    }
}

impl From<csv::Error> for ToolError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => ToolError::Io(io),
            other => ToolError::Config(format!("csv: {other:?}")),
        }
    }
}

impl From<assm_core::Error> for ToolError {
    fn from(e: assm_core::Error) -> Self {
        ToolError::Core(e)
    }
}

impl ToolError {
    /// Process exit code for this error: usage and IO problems exit 2.
    pub fn exit_code(&self) -> i32 {
        2
    }
}

pub type Result<T> = std::result::Result<T, ToolError>;
