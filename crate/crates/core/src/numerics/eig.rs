//! Cyclic Jacobi eigensolver for complex Hermitian matrices.

use serde::{Deserialize, Serialize};

use super::matrix::{CMatrix, C64};
use super::NumericsError;

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-14;

/// Default relative cutoff used to decide the numerical rank of a spectrum.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

/// Full eigendecomposition `A = V diag(eigenvalues) V^H` of a Hermitian matrix,
/// eigenvalues sorted in descending order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HermitianEig {
    pub eigenvalues: Vec<f64>,
    /// Unitary matrix whose column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: CMatrix,
}

impl HermitianEig {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }

    /// `V diag(eigenvalues) V^H`.
    pub fn reconstruct(&self) -> CMatrix {
        let v = &self.eigenvectors;
        let n = self.dim();
        CMatrix::from_fn(n, n, |r, c| {
            (0..n)
                .map(|i| v[(r, i)] * self.eigenvalues[i] * v[(c, i)].conj())
                .sum()
        })
    }
}

/// Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// The input is symmetrized as `(A + A^H)/2` first. Sweeps stop once the
/// off-diagonal Frobenius norm drops below `1e-14 * ||A||_F`.
pub fn hermitian_eig(a: &CMatrix) -> Result<HermitianEig, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    if n == 0 {
        return Err(NumericsError::DimensionMismatch(
            "eigendecomposition of an empty matrix".into(),
        ));
    }
    if a.as_slice().iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(NumericsError::NonFinite("eigendecomposition input"));
    }

    let mut a = a.hermitian_part();
    let mut v = CMatrix::identity(n);
    let tol = OFF_DIAGONAL_TOL * a.frobenius_norm();

    let mut converged = false;
    let mut residual = off_diagonal_norm(&a);
    for _ in 0..MAX_SWEEPS {
        if residual <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        residual = off_diagonal_norm(&a);
    }
    if !converged && residual > tol {
        return Err(NumericsError::NoConvergence {
            sweeps: MAX_SWEEPS,
            residual,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].re.total_cmp(&a[(i, i)].re).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[(i, i)].re).collect();
    let eigenvectors = v.select_columns(&order);
    Ok(HermitianEig {
        eigenvalues,
        eigenvectors,
    })
}

/// Number of eigenvalues above `rel_tol * max(eig_1, tiny)`.
pub fn effective_rank(eig: &HermitianEig, rel_tol: f64) -> usize {
    let threshold = rel_tol * eig.max_eigenvalue().max(f64::MIN_POSITIVE);
    eig.eigenvalues.iter().take_while(|&&e| e > threshold).count()
}

fn off_diagonal_norm(a: &CMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for r in 0..n {
        for c in 0..n {
            if r != c {
                s += a[(r, c)].norm_sqr();
            }
        }
    }
    s.sqrt()
}

/// Applies `A <- G^H A G`, `V <- V G` with the unitary plane rotation that
/// zeroes `A[p][q]`.
///
/// With `a_pq = r e^{i phi}`, the rotation is `G = P R P^H` where
/// `P = diag(1, e^{-i phi})` makes the 2x2 block real symmetric and `R` is
/// the classic real Jacobi rotation.
fn rotate(a: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let apq = a[(p, q)];
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let phase = apq / r;
    let app = a[(p, p)].re;
    let aqq = a[(q, q)].re;
    let theta = (aqq - app) / (2.0 * r);
    let t = if theta.is_infinite() {
        0.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let s_phase = phase * s;
    let s_phase_conj = s_phase.conj();
    let n = a.rows();

    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = akp * c - akq * s_phase_conj;
        a[(k, q)] = akp * s_phase + akq * c;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = apk * c - aqk * s_phase;
        a[(q, k)] = apk * s_phase_conj + aqk * c;
    }
    a[(p, q)] = C64::new(0.0, 0.0);
    a[(q, p)] = C64::new(0.0, 0.0);
    a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
    a[(q, q)] = C64::new(a[(q, q)].re, 0.0);

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = vkp * c - vkq * s_phase_conj;
        v[(k, q)] = vkp * s_phase + vkq * c;
    }
}
