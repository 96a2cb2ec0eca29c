use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("graph is not monotone: g({x1}) = {y1} > g({x2}) = {y2}")]
    NonMonotone { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("resolvent bracket not found for x = {x}, lambda = {lambda}")]
    BracketNotFound { x: f64, lambda: f64 },

    #[error("quadrature did not converge on [{a}, {b}]")]
    QuadratureFailed { a: f64, b: f64 },

    #[error("conjugate is unbounded at y = {y}")]
    ConjugateUnbounded { y: f64 },

    #[error("state became non-finite at step {step}")]
    NonFiniteState { step: usize },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last ratios {ratios:?})")]
    FixedPointDiverged { iterations: usize, ratios: Vec<f64> },

    #[error("declared Lipschitz bound {bound} violated: estimate {estimate} at sample pair {witness}")]
    LipschitzViolated { estimate: f64, bound: f64, witness: usize },

    #[error("need at least {min} paths, got {got}")]
    TooFewPaths { got: usize, min: usize },

    #[error("confidence interval too wide for {what}: half-width is {relative:.3} of the estimate")]
    CiTooWide { what: String, relative: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}
