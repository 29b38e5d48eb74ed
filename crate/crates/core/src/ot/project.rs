use crate::error::{CoreError, Result};
use crate::gmm::GmmParams;
use crate::linalg::{symmetrise, SpdMatrix};
use ndarray::Array2;

/// Maximum Gram deviation `||A A^T - I||_inf` accepted for projection axes.
pub const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Pushforward of a mixture under a linear projection with orthonormal
/// rows: means map to `A m_k`, covariances to `A Sigma_k A^T`, weights are
/// untouched. Congruence by a full-row-rank map keeps covariances SPD.
pub fn project_gmm(mu: &GmmParams, axes: &Array2<f64>) -> Result<GmmParams> {
    let (dp, d) = (axes.nrows(), axes.ncols());
    if d != mu.dim() {
        return Err(CoreError::Argument(format!(
            "axes act on R^{d}, mixture lives in R^{}",
            mu.dim()
        )));
    }
    if dp == 0 || dp > d {
        return Err(CoreError::Argument(
            "projection must map to a positive dimension at most d".into(),
        ));
    }
    let gram = axes.dot(&axes.t());
    for i in 0..dp {
        for j in 0..dp {
            let target = if i == j { 1.0 } else { 0.0 };
            if (gram[[i, j]] - target).abs() > ORTHONORMALITY_TOL {
                return Err(CoreError::Argument(
                    "projection rows are not orthonormal".into(),
                ));
            }
        }
    }

    let k = mu.n_components();
    let mut means = Array2::<f64>::zeros((k, dp));
    for c in 0..k {
        for a in 0..dp {
            let mut acc = 0.0;
            for b in 0..d {
                acc += axes[[a, b]] * mu.means()[[c, b]];
            }
            means[[c, a]] = acc;
        }
    }
    let mut covs = Vec::with_capacity(k);
    for c in 0..k {
        let projected = axes.dot(mu.covariances()[c].entries()).dot(&axes.t());
        covs.push(SpdMatrix::new(symmetrise(&projected))?);
    }
    GmmParams::new(mu.weights().clone(), means, covs)
}
