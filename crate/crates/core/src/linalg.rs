//! Dense symmetric positive-definite helpers on top of `nalgebra`.
//!
//! Every covariance or precision produced anywhere in the crate passes through
//! [`symmetrize`]. Factorizations retry once with a trace-scaled jitter of
//! `1e-12 * trace / d` on the diagonal; a second failure is an error.

use std::cell::Cell;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const JITTER_SCALE: f64 = 1e-12;

thread_local! {
    static SKIP_SYMMETRIZE: Cell<bool> = const { Cell::new(false) };
}

/// Fault-injection hook used by the verification suite: while the guard is
/// alive, [`symmetrize`] on this thread is a no-op.
pub struct SkipSymmetrizeGuard {
    previous: bool,
}

impl SkipSymmetrizeGuard {
    pub fn engage() -> Self {
        let previous = SKIP_SYMMETRIZE.with(|c| c.replace(true));
        Self { previous }
    }
}

impl Drop for SkipSymmetrizeGuard {
    fn drop(&mut self) {
        SKIP_SYMMETRIZE.with(|c| c.set(self.previous));
    }
}

/// Replaces `m` by `(m + mᵀ) / 2`. The result is bitwise symmetric.
pub fn symmetrize(m: &mut Matrix) {
    if SKIP_SYMMETRIZE.with(|c| c.get()) {
        return;
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub fn symmetrized(mut m: Matrix) -> Matrix {
    symmetrize(&mut m);
    m
}

/// Largest absolute asymmetry `max |m_ij - m_ji|`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Cholesky factorization with a single jitter retry.
pub fn cholesky(m: &Matrix, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let d = m.nrows().max(1) as f64;
    let scale = (m.trace().abs() / d).max(f64::MIN_POSITIVE);
    let mut jittered = m.clone();
    for i in 0..m.nrows() {
        jittered[(i, i)] += JITTER_SCALE * scale;
    }
    Cholesky::new(jittered).ok_or(Error::NotPositiveDefinite(what))
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse(m: &Matrix, what: &'static str) -> Result<Matrix> {
    Ok(symmetrized(cholesky(m, what)?.inverse()))
}

/// Solves `m x = rhs` for symmetric positive-definite `m`.
pub fn spd_solve(m: &Matrix, rhs: &Vector, what: &'static str) -> Result<Vector> {
    Ok(cholesky(m, what)?.solve(rhs))
}

/// Solves a general square system by LU.
pub fn lu_solve(m: &Matrix, rhs: &Vector, what: &'static str) -> Result<Vector> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or(Error::NotPositiveDefinite(what))
}

/// `(λ_min, λ_max)` of a symmetric matrix.
pub fn eigen_extremes(m: &Matrix) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

pub fn lambda_min(m: &Matrix) -> f64 {
    eigen_extremes(m).0
}

pub fn lambda_max(m: &Matrix) -> f64 {
    eigen_extremes(m).1
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_abs_diff_vec(a: &Vector, b: &Vector) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Lowest index attaining the maximum; `None` for an empty iterator.
pub fn argmax<I: IntoIterator<Item = f64>>(values: I) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax([1.0, 3.0, 3.0, 2.0]), Some(1));
        assert_eq!(argmax([5.0, 5.0]), Some(0));
        assert_eq!(argmax(std::iter::empty()), None);
    }

    #[test]
    fn symmetrize_is_bitwise_symmetric() {
        let mut m = Matrix::from_row_slice(2, 2, &[1.0, 0.1 + 0.2, 0.3, 2.0]);
        symmetrize(&mut m);
        assert_eq!(asymmetry(&m), 0.0);
    }

    #[test]
    fn skip_guard_disables_symmetrize_and_restores() {
        let raw = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.25, 1.0]);
        {
            let _g = SkipSymmetrizeGuard::engage();
            assert!(asymmetry(&symmetrized(raw.clone())) > 0.0);
        }
        assert_eq!(asymmetry(&symmetrized(raw)), 0.0);
    }

    #[test]
    fn cholesky_jitter_rescues_semidefinite_roundoff() {
        // rank-one matrix: singular, jitter makes it factorizable
        let v = Vector::from_vec(vec![1.0, 2.0]);
        let m = &v * v.transpose();
        assert!(cholesky(&m, "test").is_ok());
        let neg = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(cholesky(&neg, "test").is_err());
    }

    #[test]
    fn eigen_extremes_of_diagonal() {
        let m = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 0.5, 2.0]));
        let (lo, hi) = eigen_extremes(&m);
        assert!((lo - 0.5).abs() < 1e-14 && (hi - 3.0).abs() < 1e-14);
    }
}
