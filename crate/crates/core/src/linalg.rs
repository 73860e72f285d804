//! Small dense helpers shared by the solvers.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

pub type Chol = Cholesky<f64, Dyn>;

pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Chol> {
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite { what });
    }
    Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite { what })
}

/// log|A| from a Cholesky factor.
pub fn log_det(chol: &Chol) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// A⁻¹ through the Cholesky factor, symmetrized so that mirrored entries agree exactly.
pub fn spd_inverse(chol: &Chol) -> DMatrix<f64> {
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    inv
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let q = m.nrows();
    for i in 0..q {
        for j in (i + 1)..q {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn is_exactly_symmetric(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..i).all(|j| m[(i, j)].to_bits() == m[(j, i)].to_bits()))
}

/// Σᵢⱼ AᵢⱼBᵢⱼ = tr(AᵀB).
pub fn frobenius_dot(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    (x.abs() - t).max(0.0) * x.signum()
}

/// Largest entrywise relative change |new − old| / (|old| + floor).
pub fn max_relative_change(old: &DMatrix<f64>, new: &DMatrix<f64>, floor: f64) -> f64 {
    old.iter()
        .zip(new.iter())
        .map(|(o, n)| (n - o).abs() / (o.abs() + floor))
        .fold(0.0, f64::max)
}
