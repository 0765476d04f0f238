use thiserror::Error;

/// Errors raised by the linear algebra kernels, solvers and MPC layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("search direction is not a descent direction (slope {slope:e})")]
    NotDescent { slope: f64 },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("enumeration supports at most 20 constraints, got {0}")]
    TooManyConstraints(usize),
    #[error("no feasible KKT point exists")]
    NoFeasiblePoint,
    #[error("starting point violates the constraints by {violation:e}")]
    InfeasibleStart { violation: f64 },
    #[error("reference trace has zero cumulative cost")]
    ZeroReferenceCost,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
