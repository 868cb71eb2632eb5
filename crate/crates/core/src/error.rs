use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not symmetric ({context}): asymmetry {asymmetry:e}")]
    NotSymmetric { context: String, asymmetry: f64 },

    #[error("matrix is not positive semidefinite ({context}): min eigenvalue {min_eigenvalue:e}")]
    NotPsd {
        context: String,
        min_eigenvalue: f64,
    },

    #[error("matrix is singular beyond the jitter threshold ({context})")]
    Singular { context: String },

    #[error("block structure violated: {0}")]
    Structure(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no convergence after {iterations} iterations (last delta {last:e})", last = delta_history.last().copied().unwrap_or(f64::NAN))]
    NonConvergence {
        iterations: usize,
        delta_history: Vec<f64>,
    },

    #[error("too few Monte Carlo trials: {0} (need at least 100)")]
    TooFewTrials(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_check(context: &str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context: context.to_string(),
            expected,
            found,
        })
    }
}
