//! IO, file formats, property suite, and command implementations for the
//! attentive state-space toolkit. The numerical core lives in `assm-core`;
//! this crate adds everything that touches the filesystem or a terminal.

pub mod checks;
pub mod commands;
pub mod config;
pub mod csvio;
pub mod error;
pub mod format;
pub mod image;
pub mod weights;

pub use error::{Result, ToolError};
