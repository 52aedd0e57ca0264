use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid resolution {0}: need at least {1}")]
    InvalidResolution(usize, usize),

    #[error("non-positive {kind} weight {value:e} at index {index}")]
    FlaggedWeight {
        kind: &'static str,
        index: usize,
        value: f64,
    },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("inconsistent field: {0}")]
    Inconsistency(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    Solver {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("eigenvalue {0} not found among computed clusters")]
    Lookup(f64),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("fixed point iteration did not contract (last updates {history:?})")]
    NonContraction { history: Vec<f64> },

    #[error("no zero of the kernel one-form found (best norm {best:e}, tolerance {tol:e})")]
    KernelZeroNotFound { best: f64, tol: f64 },

    #[error("descent did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NotConverged {
        iterations: usize,
        gradient_norm: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
