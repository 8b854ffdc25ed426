//! Regularized solves with `Z = J1 diag(eps) J1^H + lambda I`: the closed-form
//! eigenbasis route and the truncated Neumann-series route.

use serde::{Deserialize, Serialize};

use super::eig::HermitianEig;
use super::matrix::{norm, CMatrix, C64};
use super::{FlopCounter, NumericsError};

const ORTHONORMAL_TOL: f64 = 1e-10;

/// `Z = J1 diag(eigenvalues) J1^H + shift * I` kept in factored form.
///
/// `basis` holds the `r` retained eigenvectors; `complement` spans the
/// orthogonal complement (the directions where `Z` acts as `shift * I`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankOperator {
    basis: CMatrix,
    eigenvalues: Vec<f64>,
    complement: CMatrix,
    shift: f64,
}

impl LowRankOperator {
    /// Keeps the leading `rank` eigenpairs of `eig`.
    pub fn from_eig(eig: &HermitianEig, rank: usize, shift: f64) -> Result<Self, NumericsError> {
        let m = eig.dim();
        if rank > m {
            return Err(NumericsError::InvalidOperator(format!(
                "rank {rank} exceeds dimension {m}"
            )));
        }
        let basis_idx: Vec<usize> = (0..rank).collect();
        let rest_idx: Vec<usize> = (rank..m).collect();
        Self::validated(
            eig.eigenvectors.select_columns(&basis_idx),
            eig.eigenvalues[..rank].to_vec(),
            eig.eigenvectors.select_columns(&rest_idx),
            shift,
        )
    }

    /// Builds the operator from an explicit orthonormal basis; the complement
    /// is completed by Gram-Schmidt against the standard basis.
    pub fn new(basis: CMatrix, eigenvalues: Vec<f64>, shift: f64) -> Result<Self, NumericsError> {
        let m = basis.rows();
        let r = basis.cols();
        let mut vecs: Vec<Vec<C64>> = (0..r).map(|c| basis.column(c)).collect();
        let mut complement = Vec::with_capacity(m.saturating_sub(r));
        for i in 0..m {
            if vecs.len() == m {
                break;
            }
            let mut e = vec![C64::new(0.0, 0.0); m];
            e[i] = C64::new(1.0, 0.0);
            // two passes of classical Gram-Schmidt
            for _ in 0..2 {
                for v in &vecs {
                    let proj: C64 = v.iter().zip(&e).map(|(a, b)| a.conj() * b).sum();
                    for (ej, vj) in e.iter_mut().zip(v) {
                        *ej -= proj * vj;
                    }
                }
            }
            let n = norm(&e);
            if n > 1e-6 {
                for ej in &mut e {
                    *ej /= n;
                }
                vecs.push(e.clone());
                complement.push(e);
            }
        }
        let complement = CMatrix::from_columns(m, &complement);
        Self::validated(basis, eigenvalues, complement, shift)
    }

    fn validated(
        basis: CMatrix,
        eigenvalues: Vec<f64>,
        complement: CMatrix,
        shift: f64,
    ) -> Result<Self, NumericsError> {
        let m = basis.rows();
        let r = basis.cols();
        if eigenvalues.len() != r {
            return Err(NumericsError::InvalidOperator(format!(
                "{} eigenvalues for a rank-{r} basis",
                eigenvalues.len()
            )));
        }
        if r > m || complement.rows() != m || complement.cols() + r != m {
            return Err(NumericsError::InvalidOperator(format!(
                "basis {m}x{r} with complement {}x{}",
                complement.rows(),
                complement.cols()
            )));
        }
        if let Some(&e) = eigenvalues.iter().find(|&&e| !(e > 0.0 && e.is_finite())) {
            return Err(NumericsError::InvalidOperator(format!(
                "retained eigenvalue {e} is not positive and finite"
            )));
        }
        if !(shift >= 0.0 && shift.is_finite()) {
            return Err(NumericsError::InvalidOperator(format!(
                "shift {shift} must be finite and nonnegative"
            )));
        }
        if r > 0 {
            let gram = basis.adjoint().matmul(&basis);
            let defect = gram.sub(&CMatrix::identity(r)).frobenius_norm();
            if defect > ORTHONORMAL_TOL * (r as f64).sqrt().max(1.0) {
                return Err(NumericsError::InvalidOperator(format!(
                    "basis is not orthonormal (defect {defect:e})"
                )));
            }
        }
        Ok(Self {
            basis,
            eigenvalues,
            complement,
            shift,
        })
    }

    pub fn dim(&self) -> usize {
        self.basis.rows()
    }

    pub fn rank(&self) -> usize {
        self.basis.cols()
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }

    /// Same operator with a different shift.
    pub fn with_shift(&self, shift: f64) -> Result<Self, NumericsError> {
        Self::validated(
            self.basis.clone(),
            self.eigenvalues.clone(),
            self.complement.clone(),
            shift,
        )
    }

    /// `Z x`, costing `2 r m + r + m` complex multiplies.
    pub fn apply(&self, x: &[C64], fc: &mut FlopCounter) -> Vec<C64> {
        let m = self.dim();
        let r = self.rank();
        assert_eq!(x.len(), m, "operator applied to a vector of wrong length");
        let mut coeffs = self.basis.adjoint_matvec(x);
        for (c, &e) in coeffs.iter_mut().zip(&self.eigenvalues) {
            *c *= e;
        }
        let mut out: Vec<C64> = x.iter().map(|v| v * self.shift).collect();
        for i in 0..m {
            let row = self.basis.row(i);
            let s: C64 = row.iter().zip(&coeffs).map(|(a, b)| a * b).sum();
            out[i] += s;
        }
        fc.record_mul((2 * r * m + r + m) as u64);
        fc.record_add((2 * r * m.saturating_sub(1) + m) as u64);
        out
    }

    /// Materializes `Z` as a dense matrix.
    pub fn to_dense(&self) -> CMatrix {
        let m = self.dim();
        let mut z = CMatrix::identity(m).scale(C64::new(self.shift, 0.0));
        for (i, &e) in self.eigenvalues.iter().enumerate() {
            z.add_outer(e, &self.basis.column(i));
        }
        z
    }

    /// Eigenvector matrix `[J1, J2]` and the matching eigenvalues of `Z^{-1}`.
    fn inverse_spectrum(&self) -> Result<(CMatrix, Vec<f64>), NumericsError> {
        let m = self.dim();
        let r = self.rank();
        if self.shift == 0.0 && r < m {
            return Err(NumericsError::Singular(format!(
                "zero shift with rank {r} < dimension {m}"
            )));
        }
        let full = CMatrix::from_fn(m, m, |row, c| {
            if c < r {
                self.basis[(row, c)]
            } else {
                self.complement[(row, c - r)]
            }
        });
        let weights = (0..m)
            .map(|i| {
                let e = if i < r { self.eigenvalues[i] } else { 0.0 };
                1.0 / (e + self.shift)
            })
            .collect();
        Ok((full, weights))
    }
}

/// `Z^{-1} b = J1 diag(1/(eps+lambda)) J1^H b + (1/lambda)(I - J1 J1^H) b`.
///
/// The projector `I - J1 J1^H` is applied as `J2 J2^H`, which keeps the
/// result accurate when `lambda` is tiny.
pub fn solve_regularized_exact(op: &LowRankOperator, b: &[C64]) -> Result<Vec<C64>, NumericsError> {
    if b.len() != op.dim() {
        return Err(NumericsError::DimensionMismatch(format!(
            "rhs of length {} for a {}-dimensional operator",
            b.len(),
            op.dim()
        )));
    }
    let (full, weights) = op.inverse_spectrum()?;
    let mut coeffs = full.adjoint_matvec(b);
    for (c, w) in coeffs.iter_mut().zip(&weights) {
        *c *= *w;
    }
    Ok(full.matvec(&coeffs))
}

/// Dense `Z^{-1}` formed from the full eigenbasis (`m^3` multiplies).
pub fn regularized_inverse(
    op: &LowRankOperator,
    fc: &mut FlopCounter,
) -> Result<CMatrix, NumericsError> {
    let (full, weights) = op.inverse_spectrum()?;
    let m = op.dim();
    let scaled = CMatrix::from_fn(m, m, |r, c| full[(r, c)] * weights[c]);
    fc.record_mul((m * m) as u64);
    fc.record_mul((m * m * m) as u64);
    fc.record_add((m * m * m.saturating_sub(1)) as u64);
    Ok(scaled.matmul(&full.adjoint()))
}

/// `J1 J1^H b`, the part of `b` inside the retained eigenspace
/// (`2 r m` multiplies).
pub fn project_onto_basis(op: &LowRankOperator, b: &[C64], fc: &mut FlopCounter) -> Vec<C64> {
    let coeffs = op.basis.adjoint_matvec(b);
    let out = op.basis.matvec(&coeffs);
    let (m, r) = (op.dim(), op.rank());
    fc.record_mul((2 * r * m) as u64);
    fc.record_add((2 * r * m) as u64);
    out
}

/// Dense `J1 diag(1/(eps+lambda)) J1^H`: the inverse of `Z` on the retained
/// eigenspace (`r m^2 + r m` multiplies). Unlike [`regularized_inverse`] it
/// never amplifies components outside that space by `1/lambda`.
pub fn range_inverse(op: &LowRankOperator, fc: &mut FlopCounter) -> Result<CMatrix, NumericsError> {
    let (m, r) = (op.dim(), op.rank());
    let mut weights = Vec::with_capacity(r);
    for &e in &op.eigenvalues {
        let d = e + op.shift;
        if !(d > 0.0) {
            return Err(NumericsError::Singular(format!("eigenvalue {e} with shift {}", op.shift)));
        }
        weights.push(1.0 / d);
    }
    let scaled = CMatrix::from_fn(m, r, |row, c| op.basis[(row, c)] * weights[c]);
    fc.record_mul((r * m) as u64);
    fc.record_mul((r * m * m) as u64);
    fc.record_add((m * m * r.saturating_sub(1)) as u64);
    Ok(scaled.matmul(&op.basis.adjoint()))
}

/// How the smallest eigenvalue of `Z` is estimated for the Neumann scaling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaMode {
    /// `kappa_min = eps_r + lambda` using the smallest retained eigenvalue.
    #[default]
    Range,
    /// `kappa_min = lambda` whenever the retained rank is below the dimension.
    Tight,
}

/// `beta = 2 / (kappa_max + kappa_min)` with `kappa_max = eig_max + lambda`
/// and `kappa_min = eig_min_used + lambda`.
pub fn nse_scaling(eig_max: f64, eig_min_used: f64, lambda: f64) -> f64 {
    2.0 / ((eig_max + lambda) + (eig_min_used + lambda))
}

/// Scaling factor for `op` under the chosen `kappa_min` convention.
pub fn nse_beta(op: &LowRankOperator, mode: KappaMode) -> f64 {
    let eig_max = op.eigenvalues().first().copied().unwrap_or(0.0);
    let eig_min = match mode {
        KappaMode::Range => op.eigenvalues().last().copied().unwrap_or(0.0),
        KappaMode::Tight if op.rank() < op.dim() => 0.0,
        KappaMode::Tight => op.eigenvalues().last().copied().unwrap_or(0.0),
    };
    nse_scaling(eig_max, eig_min, op.shift())
}

/// Largest `|1 - beta kappa|` over the true spectrum of `op`.
pub fn nse_contraction(op: &LowRankOperator, beta: f64) -> f64 {
    let mut worst = 0.0f64;
    for &e in op.eigenvalues() {
        worst = worst.max((1.0 - beta * (e + op.shift())).abs());
    }
    if op.rank() < op.dim() {
        worst = worst.max((1.0 - beta * op.shift()).abs());
    }
    worst
}

/// Truncated Neumann series `beta * sum_{s=0..order} (I - beta Z)^s b`,
/// evaluated by repeated operator application.
pub fn nse_solve(
    op: &LowRankOperator,
    beta: f64,
    order: usize,
    b: &[C64],
    fc: &mut FlopCounter,
) -> Vec<C64> {
    let m = op.dim();
    assert_eq!(b.len(), m, "rhs of wrong length");
    let mut term = b.to_vec();
    let mut acc = b.to_vec();
    for _ in 0..order {
        let zt = op.apply(&term, fc);
        for ((t, z), a) in term.iter_mut().zip(&zt).zip(acc.iter_mut()) {
            *t -= z * beta;
            *a += *t;
        }
        fc.record_mul(m as u64);
        fc.record_add(2 * m as u64);
    }
    fc.record_mul(m as u64);
    acc.iter().map(|a| a * beta).collect()
}

/// Gauss-Jordan inverse with partial pivoting.
pub fn invert(a: &CMatrix, fc: &mut FlopCounter) -> Result<CMatrix, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::DimensionMismatch(format!(
            "cannot invert a {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    let mut work = a.clone();
    let mut inv = CMatrix::identity(n);
    let scale = a.frobenius_norm().max(f64::MIN_POSITIVE);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| work[(i, col)].norm().total_cmp(&work[(j, col)].norm()))
            .expect("nonempty pivot range");
        if work[(pivot, col)].norm() <= 1e-14 * scale {
            return Err(NumericsError::Singular(format!(
                "pivot {col} vanishes in a {n}x{n} inverse"
            )));
        }
        if pivot != col {
            for c in 0..n {
                let t = work[(col, c)];
                work[(col, c)] = work[(pivot, c)];
                work[(pivot, c)] = t;
                let t = inv[(col, c)];
                inv[(col, c)] = inv[(pivot, c)];
                inv[(pivot, c)] = t;
            }
        }
        let p = work[(col, col)].inv();
        for c in 0..n {
            work[(col, c)] *= p;
            inv[(col, c)] *= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = work[(r, col)];
            if f == C64::new(0.0, 0.0) {
                continue;
            }
            for c in 0..n {
                let wc = work[(col, c)];
                let ic = inv[(col, c)];
                work[(r, c)] -= f * wc;
                inv[(r, c)] -= f * ic;
            }
        }
    }
    let n64 = n as u64;
    fc.record_mul(2 * n64 * n64 * n64);
    fc.record_add(2 * n64 * n64 * n64.saturating_sub(1));
    Ok(inv)
}
