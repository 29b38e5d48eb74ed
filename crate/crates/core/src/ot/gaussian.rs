use crate::linalg::{spd_sqrt, symmetrise, SpdMatrix};
use ndarray::ArrayView1;

/// Squared Bures-Wasserstein distance
/// `tr(S0 + S1 - 2 (S0^{1/2} S1 S0^{1/2})^{1/2})`, clamped at zero.
pub fn bures_squared(s0: &SpdMatrix, s1: &SpdMatrix) -> f64 {
    let r0 = spd_sqrt(s0.entries());
    let inner = symmetrise(&r0.dot(s1.entries()).dot(&r0));
    let cross = spd_sqrt(&inner);
    let d = s0.dim();
    let tr_cross: f64 = (0..d).map(|i| cross[[i, i]]).sum();
    (s0.trace() + s1.trace() - 2.0 * tr_cross).max(0.0)
}

/// Bures-Wasserstein distance between PSD matrices.
pub fn bures_distance(s0: &SpdMatrix, s1: &SpdMatrix) -> f64 {
    bures_squared(s0, s1).sqrt()
}

/// Closed-form squared W2 between Gaussians:
/// `||m0 - m1||^2 + tr(S0 + S1 - 2 (S0^{1/2} S1 S0^{1/2})^{1/2})`.
///
/// Near-singular covariances are handled by the eigenvalue clamping inside
/// the matrix square root; the result is clamped at zero.
pub fn gaussian_w2(
    m0: ArrayView1<f64>,
    s0: &SpdMatrix,
    m1: ArrayView1<f64>,
    s1: &SpdMatrix,
) -> f64 {
    let mean_term: f64 = m0
        .iter()
        .zip(m1.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (mean_term + bures_squared(s0, s1)).max(0.0)
}
