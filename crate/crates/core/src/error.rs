use thiserror::Error;

/// Errors raised by the numeric kernels, the regularizers and the solvers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty {0} is not allowed")]
    Empty(&'static str),

    #[error("invalid batch size {batch} for population of {population}")]
    InvalidBatch { batch: usize, population: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("{value} lies outside the domain [-{lambda}, {lambda}] of the conjugate")]
    OutsideDomain { value: f64, lambda: f64 },

    #[error("dual variable is infeasible: |{value}| exceeds lambda = {lambda} at entry {index}")]
    DualInfeasible {
        index: usize,
        value: f64,
        lambda: f64,
    },

    #[error("not enough history: need {needed} iterates, have {have}")]
    InsufficientHistory { needed: usize, have: usize },

    #[error("code entry {0} is not ±1")]
    NotBinary(f64),

    #[error("{0}")]
    Undefined(&'static str),

    #[error("solver aborted at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("malformed parameter file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
