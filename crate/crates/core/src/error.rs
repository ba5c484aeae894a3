use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("point {index} at ({x}, {y}) lies outside the {width}x{height} image")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("scene packing infeasible: placed {placed} of {requested} objects")]
    PackingInfeasible { placed: usize, requested: usize },
    #[error("operation requires at least {required} points, got {actual}")]
    TooFewPoints { required: usize, actual: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
