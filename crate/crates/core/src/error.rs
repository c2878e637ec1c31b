use thiserror::Error;

/// Errors raised by the assimilation routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid problem: {}", .0.join("; "))]
    InvalidProblem(Vec<String>),

    #[error("{0} not symmetric")]
    NotSymmetric(String),

    #[error("innovation covariance singular (condition estimate {0:e})")]
    InnovationSingular(f64),

    #[error("DARE iteration did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("lower bound requires invertible Q")]
    LowerBoundSingularQ,

    #[error("upper bound inapplicable: {0}")]
    UpperBoundInapplicable(String),

    #[error("ensemble collapsed to measure zero")]
    MeasureZero,

    #[error("{0} not positive semi-definite")]
    NotPsd(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("empty grid")]
    EmptyGrid,

    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, Error>;
