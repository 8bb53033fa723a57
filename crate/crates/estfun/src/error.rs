use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter vector lies outside the parameter space, or an evaluation
    /// hit a point where the model is undefined.
    #[error("domain violation: {0}")]
    Domain(String),

    /// Data and estimating function disagree on dimensions or layout.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A matrix that must be invertible is singular or too ill-conditioned.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Model parameters describe a non-stationary or explosive process.
    #[error("unstable model: {0}")]
    Unstable(String),

    /// Numerical routine failed to reach its tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Invalid configuration (bad keys, missing ids, inconsistent values).
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
