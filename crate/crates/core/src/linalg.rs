//! Dense symmetric positive-definite linear algebra.
//!
//! The covariance inverse is never formed. Quadratic forms are evaluated as
//! `‖L⁻¹v‖²` through a single forward substitution against the Cholesky
//! factor, and full solves use a forward and a backward substitution.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix dimension must be at least 1")]
    EmptyMatrix,
    #[error("matrix entries must be finite")]
    NonFinite,
}

/// Symmetric matrix stored row-major. Symmetry is enforced on construction by
/// replacing the input with `(m + mᵀ)/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SpdMatrix<T> {
    dim: usize,
    entries: Vec<T>,
}

impl<T: Scalar> SpdMatrix<T> {
    pub fn new(dim: usize, entries: Vec<T>) -> Result<Self, LinalgError> {
        if dim == 0 {
            return Err(LinalgError::EmptyMatrix);
        }
        if entries.len() != dim * dim {
            return Err(LinalgError::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite);
        }
        let mut m = Self { dim, entries };
        m.symmetrize();
        Ok(m)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, LinalgError> {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            if row.len() != dim {
                return Err(LinalgError::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            entries.extend_from_slice(row);
        }
        Self::new(dim, entries)
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![T::one(); dim])
    }

    pub fn diagonal(diag: &[T]) -> Self {
        let dim = diag.len();
        let mut entries = vec![T::zero(); dim * dim];
        for (i, &d) in diag.iter().enumerate() {
            entries[i * dim + i] = d;
        }
        Self { dim, entries }
    }

    fn symmetrize(&mut self) {
        let n = self.dim;
        let half = T::from_f64_lossy(0.5);
        for i in 0..n {
            for j in (i + 1)..n {
                let avg = (self.entries[i * n + j] + self.entries[j * n + i]) * half;
                self.entries[i * n + j] = avg;
                self.entries[j * n + i] = avg;
            }
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.entries[row * self.dim + col]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn trace(&self) -> T {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        self.entries
            .chunks_exact(self.dim)
            .map(|row| crate::scalar::dot(row, v))
            .collect()
    }

    pub fn cholesky(&self) -> Result<CholeskyFactor<T>, LinalgError> {
        cholesky_decompose(self)
    }

    pub fn regularized(&self, ridge_scale: T) -> Self {
        regularize_spd(self, ridge_scale)
    }
}

/// Lower-triangular Cholesky factor `L` with `L·Lᵀ = m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CholeskyFactor<T> {
    dim: usize,
    lower: Vec<T>,
    log_det: T,
}

/// Factor `m` as `L·Lᵀ`. Fails on the first pivot that is not strictly
/// positive, which tells the caller to regularize.
pub fn cholesky_decompose<T: Scalar>(m: &SpdMatrix<T>) -> Result<CholeskyFactor<T>, LinalgError> {
    let n = m.dim;
    let mut lower = vec![T::zero(); n * n];
    let mut log_det = T::zero();
    for j in 0..n {
        let row_j = &lower[j * n..j * n + j];
        let pivot = m.get(j, j) - crate::scalar::norm_sq(row_j);
        if !(pivot > T::zero()) {
            return Err(LinalgError::NotPositiveDefinite {
                row: j,
                pivot: pivot.to_f64_lossy(),
            });
        }
        let d = pivot.sqrt();
        lower[j * n + j] = d;
        log_det = log_det + d.ln();
        let inv_d = d.recip();
        for i in (j + 1)..n {
            let (head, tail) = lower.split_at_mut(i * n);
            let row_j = &head[j * n..j * n + j];
            let row_i = &mut tail[..j + 1];
            let s = m.get(i, j) - crate::scalar::dot(&row_i[..j], row_j);
            row_i[j] = s * inv_d;
        }
    }
    Ok(CholeskyFactor {
        dim: n,
        lower,
        log_det: log_det + log_det,
    })
}

/// Solve `(L·Lᵀ)·u = v`.
pub fn solve_spd<T: Scalar>(f: &CholeskyFactor<T>, v: &[T]) -> Result<Vec<T>, LinalgError> {
    let mut y = f.forward_solve(v)?;
    f.backward_solve_in_place(&mut y);
    Ok(y)
}

/// Return `m + ε·I` with `ε = ridge_scale · trace(m)/dim`, or `ε = ridge_scale`
/// when the trace is zero.
pub fn regularize_spd<T: Scalar>(m: &SpdMatrix<T>, ridge_scale: T) -> SpdMatrix<T> {
    let eps = ridge_epsilon(m, ridge_scale);
    let mut out = m.clone();
    if eps != T::zero() {
        let n = out.dim;
        for i in 0..n {
            out.entries[i * n + i] = out.entries[i * n + i] + eps;
        }
    }
    out
}

/// The absolute ridge `regularize_spd` adds for a given `ridge_scale`.
pub fn ridge_epsilon<T: Scalar>(m: &SpdMatrix<T>, ridge_scale: T) -> T {
    let trace = m.trace();
    if trace == T::zero() {
        ridge_scale
    } else {
        ridge_scale * trace / T::from_usize(m.dim).unwrap()
    }
}

impl<T: Scalar> CholeskyFactor<T> {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    /// `ln det(m)`, i.e. twice the sum of the log-diagonal of `L`.
    pub fn log_det(&self) -> T {
        self.log_det
    }

    /// Smallest pivot `L_ii²`; a lower bound on the smallest eigenvalue.
    pub fn min_pivot(&self) -> T {
        (0..self.dim)
            .map(|i| {
                let d = self.lower[i * self.dim + i];
                d * d
            })
            .fold(T::infinity(), T::min)
    }

    fn check_len(&self, len: usize) -> Result<(), LinalgError> {
        if len != self.dim {
            return Err(LinalgError::DimensionMismatch {
                expected: self.dim,
                found: len,
            });
        }
        Ok(())
    }

    /// Solve `L·y = v`.
    pub fn forward_solve(&self, v: &[T]) -> Result<Vec<T>, LinalgError> {
        self.check_len(v.len())?;
        let n = self.dim;
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let row = &self.lower[i * n..i * n + i];
            let s = v[i] - crate::scalar::dot(row, &y);
            y.push(s / self.lower[i * n + i]);
        }
        Ok(y)
    }

    /// `‖L⁻¹v‖² = vᵀ·m⁻¹·v`.
    pub fn quadratic_form(&self, v: &[T]) -> Result<T, LinalgError> {
        Ok(crate::scalar::norm_sq(&self.forward_solve(v)?))
    }

    fn backward_solve_in_place(&self, y: &mut [T]) {
        let n = self.dim;
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - self.lower[k * n + i] * y[k];
            }
            y[i] = s / self.lower[i * n + i];
        }
    }

    pub fn solve(&self, v: &[T]) -> Result<Vec<T>, LinalgError> {
        solve_spd(self, v)
    }

    /// `L·Lᵀ`, row-major.
    pub fn reconstruct(&self) -> Vec<T> {
        let n = self.dim;
        let mut out = vec![T::zero(); n * n];
        for i in 0..n {
            for j in 0..=i {
                let k = j + 1;
                let v = crate::scalar::dot(&self.lower[i * n..i * n + k], &self.lower[j * n..j * n + k]);
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        out
    }
}
