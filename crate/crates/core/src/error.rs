use alloc::string::String;
use core::fmt;

/// Error type shared by every stage of the core pipeline.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Image or vector sizes that must agree do not.
    Dimension(String),
    /// A coordinate fell outside the sampled frame.
    OutOfRange { x: f64, y: f64, width: usize, height: usize },
    /// Unsupported channel count for the requested operation.
    Channels { expected: usize, found: usize },
    /// Degenerate or invalid geometry (collinear points, singular transform, ...).
    Geometry(String),
    /// Not enough samples, views or frames to run the operation.
    InsufficientData { needed: usize, found: usize },
    /// A point fell outside the domain of the camera model.
    Domain(String),
    /// An iterative solver failed to converge.
    Numerical { message: String, residual: f64 },
    /// An embedding that must be unit-norm is not (or is zero).
    Normalization(String),
    /// Invalid configuration values.
    Config(String),
    /// A sequence that must be ordered is not.
    Ordering { index: usize, message: String },
    /// A stored artifact violates an invariant.
    Validation { index: Option<usize>, message: String },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension(m) => write!(f, "dimension error: {m}"),
            Error::OutOfRange { x, y, width, height } => write!(
                f,
                "coordinate ({x}, {y}) outside {width}x{height} frame"
            ),
            Error::Channels { expected, found } => {
                write!(f, "channel error: expected {expected} channel(s), found {found}")
            }
            Error::Geometry(m) => write!(f, "geometry error: {m}"),
            Error::InsufficientData { needed, found } => {
                write!(f, "insufficient data: need at least {needed}, got {found}")
            }
            Error::Domain(m) => write!(f, "domain error: {m}"),
            Error::Numerical { message, residual } => {
                write!(f, "numerical error: {message} (residual {residual:e})")
            }
            Error::Normalization(m) => write!(f, "normalization error: {m}"),
            Error::Config(m) => write!(f, "config error: {m}"),
            Error::Ordering { index, message } => {
                write!(f, "ordering error at index {index}: {message}")
            }
            Error::Validation { index: Some(i), message } => {
                write!(f, "validation error at record {i}: {message}")
            }
            Error::Validation { index: None, message } => write!(f, "validation error: {message}"),
        }
    }
}

impl core::error::Error for Error {}
