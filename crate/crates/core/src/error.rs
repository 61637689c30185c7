use thiserror::Error;

/// Errors raised while building, validating or simulating models.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model: {0}")]
    Invalid(String),

    #[error("row {row} of the transition matrix sums to {sum} (expected 1)")]
    NonStochasticRow { row: usize, sum: f64 },

    #[error("switching chain is reducible; strongly connected components: {components:?}")]
    Reducible { components: Vec<Vec<usize>> },

    #[error("switching chain has no states")]
    EmptyChain,

    #[error("right-hand side is not centred: pi(f) = {0:e}")]
    Uncentred(f64),

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("quadrature did not converge: achieved error estimate {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("event budget of {limit} exceeded before t = {horizon}; use a larger epsilon or a shorter horizon")]
    EventOverflow { limit: u64, horizon: f64 },

    #[error("ODE step {step} rejected: halving it moved xi(T) by {change:e} (> {tolerance:e})")]
    StepRejected { step: f64, change: f64, tolerance: f64 },

    #[error("time grid point {time} lies outside [0, {horizon}]")]
    GridOutsideHorizon { time: f64, horizon: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error("model file: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
