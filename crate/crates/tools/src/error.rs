use std::path::PathBuf;

use tactile_core::calibrate::CalibrationError;

/// Errors raised by file handling and the command-line front end.
#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error(transparent)]
    Core(#[from] tactile_core::Error),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0} already exists")]
    Conflict(PathBuf),
    #[error("storage error: {0}")]
    Storage(String),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T, E = ToolError> = std::result::Result<T, E>;

impl ToolError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ToolError::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        ToolError::Parse { path: path.into(), message: message.to_string() }
    }

    /// 1 for usage errors, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            ToolError::Usage(_) => 1,
            _ => 2,
        }
    }
}
