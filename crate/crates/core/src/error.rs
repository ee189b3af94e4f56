//! Error types shared across the solver crates.

use thiserror::Error;

/// Errors produced while building grids, validating parameters, or running solvers.
#[derive(Debug, Error)]
pub enum CoreError {
    /// A configuration value violates a model constraint.
    #[error("configuration error: {0}")]
    Config(String),

    /// Config text could not be parsed; carries the offending line number(s).
    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A time step was rejected because it violates the CFL condition.
    #[error("CFL violation: dt = {dt:.6e} exceeds limit {limit:.6e} ({reason})")]
    CflViolation { dt: f64, limit: f64, reason: String },

    /// The activity drift points out of the triangle on a boundary face.
    #[error("activity drift points outward on a boundary face (G·n = {flux:.6e} at y = ({y1:.4}, {y2:.4}))")]
    OutwardActivityFlux { flux: f64, y1: f64, y2: f64 },

    /// Requested equilibrium is not a nonnegative density.
    #[error("equilibrium not nonnegative: |U| = {requested:.6e} exceeds max admissible {max_allowed:.6e}")]
    EquilibriumNegative { requested: f64, max_allowed: f64 },

    /// The closure denominator vanished (all rates and fields zero).
    #[error("closure undefined: reaction denominator is zero")]
    UndefinedClosure,

    /// Picard iteration failed to contract within the allowed iterations.
    #[error("Picard iteration non-contractive after {iterations} iterations (last ratio {last_ratio:.4}); shorten the time horizon")]
    NonContractive { iterations: usize, last_ratio: f64 },

    /// Scaling exponents fall outside the hyperbolic regime.
    #[error("scaling regime violation: {0}")]
    RegimeViolation(String),

    /// Invalid input to a numerical utility.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A binary field container failed validation on read.
    #[error("field container format error: {0}")]
    ContainerFormat(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;
