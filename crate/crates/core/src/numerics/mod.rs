//! Complex dense linear algebra used by the precoder: Hermitian
//! eigendecomposition, regularized low-rank solves, Neumann-series
//! approximate inversion, and complex flop accounting.

mod eig;
mod matrix;
mod solve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eig::{effective_rank, hermitian_eig, HermitianEig, DEFAULT_RANK_TOL};
pub use matrix::{dot, norm, norm_sqr, scaled, sub, CMatrix, C64};
pub use solve::{
    invert, nse_beta, nse_contraction, nse_scaling, nse_solve, project_onto_basis, range_inverse,
    regularized_inverse,
    solve_regularized_exact, KappaMode, LowRankOperator,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("Jacobi sweeps did not converge after {sweeps} sweeps (off-diagonal norm {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid low-rank operator: {0}")]
    InvalidOperator(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

/// Running count of complex scalar multiplies and adds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopCounter {
    pub complex_multiplies: u64,
    pub complex_adds: u64,
}

impl FlopCounter {
    #[inline]
    pub fn record_mul(&mut self, n: u64) {
        self.complex_multiplies += n;
    }

    #[inline]
    pub fn record_add(&mut self, n: u64) {
        self.complex_adds += n;
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn merge(&mut self, other: &FlopCounter) {
        self.complex_multiplies += other.complex_multiplies;
        self.complex_adds += other.complex_adds;
    }
}
