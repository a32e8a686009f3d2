use thiserror::Error;

/// Errors produced by market construction, solvers, and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was called in a way that cannot be meaningful.
    #[error("usage error: {0}")]
    Usage(String),

    /// A configuration document could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    /// A solver exhausted its iteration or bracketing budget.
    #[error("solver did not converge: {0}")]
    NonConvergence(String),

    /// An explicit integration step left the feasible region.
    #[error("integration step too large: {0}")]
    StepSize(String),

    /// The instance is degenerate for the requested metric.
    #[error("degenerate instance: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
