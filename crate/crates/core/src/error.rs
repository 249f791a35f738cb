use thiserror::Error;

/// Errors raised by the solvers and their supporting kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("query {x} outside domain [{lower}, {upper}]")]
    Domain { x: f64, lower: f64, upper: f64 },

    #[error("singular tridiagonal system: pivot {pivot:e} at row {row}")]
    Singular { row: usize, pivot: f64 },

    #[error("non-finite value at step {step} (t = {t}, y = {y})")]
    NonFinite { step: usize, t: f64, y: f64 },

    #[error("{location}: {message}")]
    Validation { location: String, message: String },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("iteration diverged after {iterations} iterations (change {change:e})")]
    Diverged { iterations: usize, change: f64 },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
