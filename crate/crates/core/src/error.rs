use alloc::string::String;

use crate::search::Audit;

/// Errors produced by the score field, solvers, verifiers, and search drivers.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical divergence at sigma = {sigma}")]
    NumericalDivergence { sigma: f64 },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("similarity undefined for a zero-norm feature vector")]
    UndefinedSimilarity,
    #[error("search budget exhausted: {spent} NFEs spent, {needed} more needed, limit {limit}")]
    BudgetExhausted {
        spent: u64,
        needed: u64,
        limit: u64,
        audit: Audit,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn ensure_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid(alloc::format!("{what} contains a non-finite value")))
    }
}

pub(crate) fn ensure_dim(xs: &[f64], dim: usize, what: &str) -> Result<()> {
    if xs.len() == dim {
        Ok(())
    } else {
        Err(Error::invalid(alloc::format!(
            "{what} has dimension {}, expected {dim}",
            xs.len()
        )))
    }
}
