//! File formats, episode storage, the processing pipeline and the
//! `tactile` command-line tool built on `tactile-core`.

pub mod cli;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod png;
pub mod sim;
pub mod store;

pub use error::{Result, ToolError};
