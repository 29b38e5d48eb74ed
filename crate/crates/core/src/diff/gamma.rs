use super::context::DiffContext;
use crate::gmm::{Dataset, GmmParams};
use ndarray::{Array3, Array4, Array5};

/// The four differential blocks of the responsibility map, laid out with
/// the appendix index conventions:
///
/// * `d_w[i, k, l]`
/// * `d_means[i, k, l, c]`
/// * `d_covs[i, k, l, c, e]`
/// * `d_x[i, k, j, c]` (nonzero only on the diagonal `j = i`)
///
/// Differentiating a row-stochastic map, every block sums to zero over `k`.
#[derive(Debug, Clone)]
pub struct GammaDifferentials {
    pub d_w: Array3<f64>,
    pub d_means: Array4<f64>,
    pub d_covs: Array5<f64>,
    pub d_x: Array4<f64>,
}

/// Evaluates all four blocks as dense tensors. Meant for the desk-scale
/// instances of the test oracles; the Jacobian assemblies stream the same
/// coefficients without materialising these tensors.
pub fn d_gamma(theta: &GmmParams, x: &Dataset) -> GammaDifferentials {
    let ctx = DiffContext::new(theta, x);
    let (n, k, d) = (ctx.n, ctx.k, ctx.d);

    let mut d_w = Array3::<f64>::zeros((n, k, k));
    let mut d_means = Array4::<f64>::zeros((n, k, k, d));
    let mut d_covs = Array5::<f64>::zeros((n, k, k, d, d));
    let mut d_x = Array4::<f64>::zeros((n, k, n, d));

    for i in 0..n {
        for kk in 0..k {
            for l in 0..k {
                d_w[[i, kk, l]] = ctx.dgamma_dw(i, kk, l);
                let fm = ctx.dgamma_dm_factor(i, kk, l);
                for c in 0..d {
                    d_means[[i, kk, l, c]] = fm * ctx.q[[i, l, c]];
                }
                let fs = ctx.dgamma_dsigma_factor(i, kk, l);
                for c in 0..d {
                    for e in 0..d {
                        d_covs[[i, kk, l, c, e]] = fs * ctx.e_block(i, l, c, e);
                    }
                }
            }
            for c in 0..d {
                d_x[[i, kk, i, c]] = ctx.v[[i, kk, c]];
            }
        }
    }

    GammaDifferentials {
        d_w,
        d_means,
        d_covs,
        d_x,
    }
}
