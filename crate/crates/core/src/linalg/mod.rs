//! Dense symmetric/SPD matrix primitives: Cholesky, cyclic-Jacobi
//! eigendecomposition, matrix square root with its explicit differential,
//! LU solves and stable log-space reductions.
//!
//! Everything here is a pure function on immutable inputs; matrices are
//! small and dense (`d <= 64` in all intended uses).

mod eig;
mod lu;
mod spd;

pub use eig::{jacobi_eigh, EigenDecomposition};
pub use lu::{lu_factor, LuFactor};
pub use spd::{
    cholesky, spd_sqrt, spd_sqrt_differential, CholeskyFactor, SpdMatrix, SqrtDifferential,
};

use crate::error::{CoreError, Result};
use ndarray::{Array1, Array2, ArrayView1};

/// Relative symmetry tolerance enforced by [`SpdMatrix`] construction.
pub const SYMMETRY_TOL: f64 = 1e-12;
/// Relative reconstruction tolerance promised by [`CholeskyFactor`].
pub const CHOLESKY_RECONSTRUCTION_TOL: f64 = 1e-10;
/// Orthogonality/reconstruction tolerance promised by [`EigenDecomposition`].
pub const EIGEN_TOL: f64 = 1e-10;
/// Relative residual promised by [`spd_sqrt`].
pub const SQRT_TOL: f64 = 1e-9;

/// `log sum_i exp(v_i)` computed against overflow by shifting by `max(v)`.
///
/// Exact for singletons. Empty input is an error.
pub fn logsumexp(v: ArrayView1<f64>) -> Result<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() {
        return Err(CoreError::Argument("logsumexp of empty vector".into()));
    }
    if !m.is_finite() {
        return Err(CoreError::Argument("logsumexp of non-finite vector".into()));
    }
    if v.len() == 1 {
        return Ok(v[0]);
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

/// Symmetric part `(m + m^T) / 2`.
pub fn symmetrise(m: &Array2<f64>) -> Array2<f64> {
    let mut out = m.clone();
    let d = m.nrows();
    for i in 0..d {
        for j in 0..d {
            out[[i, j]] = 0.5 * (m[[i, j]] + m[[j, i]]);
        }
    }
    out
}

/// Frobenius norm.
pub fn fro_norm(m: &Array2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Squared Euclidean norm of a vector view.
pub fn sq_norm(v: ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Largest singular value of `m`, by power iteration on `m^T m`.
///
/// Runs at most `max_iter` iterations, stopping early when the estimate
/// changes by less than `tol` relatively.
pub fn spectral_norm(m: &Array2<f64>, max_iter: usize, tol: f64) -> f64 {
    let n = m.ncols();
    if n == 0 || m.nrows() == 0 {
        return 0.0;
    }
    // Deterministic start vector; a fixed non-axis direction avoids landing
    // exactly in a null space for the matrices seen here.
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + (i as f64) / (n as f64 + 1.0));
    let norm = |x: &Array1<f64>| x.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = norm(&v);
    v.mapv_inplace(|x| x / nv);
    let mut sigma = 0.0_f64;
    for _ in 0..max_iter {
        let mv = m.dot(&v);
        let mut w = m.t().dot(&mv);
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        w.mapv_inplace(|x| x / nw);
        let new_sigma = norm(&m.dot(&w));
        v = w;
        if (new_sigma - sigma).abs() <= tol * new_sigma.max(1e-300) {
            return new_sigma;
        }
        sigma = new_sigma;
    }
    sigma
}
