//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by grid construction, field operations and solvers.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (degenerate bounds, nonpositive variance, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Structurally invalid input (mismatched grids, unsorted times, length mismatch).
    #[error("input error: {0}")]
    Input(String),

    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A density with zero or negative total mass cannot be normalized.
    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    /// A solver produced NaN/Inf or failed to converge where convergence is required.
    #[error("solver diagnostic: {0}")]
    Diagnostic(String),

    /// Failure reading or writing run artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed artifact file (snapshot, trace, ...).
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
