//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates its contract (bad dimensions, non-positive
    /// standard deviation, `k > m`, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A slice passed to a model or filter has the wrong length.
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A time or slot index is outside its valid range.
    #[error("{what} index {got} out of range (< {limit})")]
    IndexOutOfRange {
        what: &'static str,
        got: usize,
        limit: usize,
    },

    /// Every weight in a vector is zero (or `-inf` in log space). This usually
    /// signals numerical underflow or a violated measurement-density bound and
    /// aborts the replicate rather than silently falling back to uniform.
    #[error("degenerate weights at step {step}")]
    DegenerateWeights { step: usize },

    /// A propagated state contains a non-finite component (ODE overflow, ...).
    #[error("non-finite state at step {step}")]
    NonFiniteState { step: usize },

    /// Coupled chains did not meet within the configured sweep cap.
    #[error("chains did not meet within {cap} sweeps")]
    SweepCapExceeded { cap: usize },

    /// An estimator combination was asked for chain values it was not given.
    #[error("insufficient history: {0}")]
    InsufficientHistory(String),

    /// A numerical routine failed (non-invertible innovation covariance, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
