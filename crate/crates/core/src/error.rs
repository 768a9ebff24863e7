//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by the analytic backends, samplers, and the sweep runner.
#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside a function's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid scenario or system configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A numerical backend could not produce a trustworthy value. Carries the
    /// partial result and its estimated error so the caller can still inspect it.
    #[error("evaluation error: {reason} (partial value {partial:.6e}, error estimate {error_estimate:.3e})")]
    Eval {
        reason: String,
        partial: f64,
        error_estimate: f64,
    },

    /// Numerically singular Gram matrix (rank-deficient channel).
    #[error("singular matrix: {0}")]
    Singular(String),

    /// Sweep configuration document could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
