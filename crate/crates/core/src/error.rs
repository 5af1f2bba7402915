//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A value lies outside the mathematical domain of a function.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The objective was not finite anywhere on the search interval.
    #[error("objective is not finite anywhere on [{lo}, {hi}]")]
    Evaluation { lo: f64, hi: f64 },

    /// A bisection bracket does not straddle the crossover.
    #[error("bracket [{lo}, {hi}] does not straddle a crossover")]
    Bracket { lo: f64, hi: f64 },

    /// An iterative solver stopped without meeting its tolerance.
    #[error("no convergence after {iterations} iterations: best iterate ({x}, {y}), residual {residual:e}")]
    Convergence {
        x: f64,
        y: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unsupported field order {0}: the simulator requires a prime q")]
    UnsupportedField(u32),

    #[error("block length {n} exceeds the exhaustive-enumeration limit {max}")]
    Size { n: usize, max: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl Error {
    pub(crate) fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
