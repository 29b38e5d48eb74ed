use crate::linalg::CholeskyFactor;
use ndarray::{Array1, ArrayView1};

const LOG_2PI: f64 = 1.8378770664093453; // ln(2 * pi)

/// Log Gaussian density through the Cholesky factor of the covariance:
///
/// `log g(x) = -(d/2) log 2pi - sum_a log L_aa - 0.5 ||L^{-1}(x - m)||^2`,
///
/// with the inverse applied by triangular solve.
pub fn log_density(mean: ArrayView1<f64>, cov_chol: &CholeskyFactor, x: ArrayView1<f64>) -> f64 {
    let d = mean.len();
    debug_assert_eq!(cov_chol.dim(), d);
    debug_assert_eq!(x.len(), d);
    let diff = Array1::from_iter((0..d).map(|a| x[a] - mean[a]));
    let y = cov_chol.solve_lower(diff.view());
    let quad: f64 = y.iter().map(|v| v * v).sum();
    let log_diag: f64 = (0..d).map(|a| cov_chol.lower()[[a, a]].ln()).sum();
    -0.5 * (d as f64) * LOG_2PI - log_diag - 0.5 * quad
}
