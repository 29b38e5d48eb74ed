use super::{solve_discrete_ot, CostMatrix, TransportPlan};
use crate::error::Result;
use crate::gmm::GmmParams;
use crate::linalg::{jacobi_eigh, spd_sqrt, spd_sqrt_differential, symmetrise};
use ndarray::{Array2, Array3};

/// Squared mixture-Wasserstein distance: exact discrete transport between
/// component weights under pairwise Gaussian-W2 costs.
pub fn mw2_squared(mu0: &GmmParams, mu1: &GmmParams) -> Result<(f64, TransportPlan)> {
    let cost = CostMatrix::between(mu0, mu1)?;
    let (plan, value) = solve_discrete_ot(&cost, mu0.weights(), mu1.weights())?;
    Ok((value.max(0.0), plan))
}

/// Envelope gradient of `MW2^2` with respect to the first mixture's means
/// and covariances, holding the optimal plan fixed.
///
/// Weight sensitivity is deliberately not provided; fixed-weight flows are
/// the supported regime and weight effects can be probed by finite
/// differences.
#[derive(Debug, Clone)]
pub struct Mw2Gradient {
    pub value: f64,
    pub plan: TransportPlan,
    /// K0 x d gradient with respect to the means of `mu0`.
    pub d_means: Array2<f64>,
    /// Per-component d x d gradients with respect to the covariances of
    /// `mu0`, as full (symmetric) coordinate blocks.
    pub d_covs: Array3<f64>,
    /// Propagated from the square-root differential when a Sylvester
    /// divisor was masked.
    pub near_singular: bool,
}

pub fn mw2_grad_params(mu0: &GmmParams, mu1: &GmmParams) -> Result<Mw2Gradient> {
    let (value, plan) = mw2_squared(mu0, mu1)?;
    grad_with_plan(mu0, mu1, value, plan)
}

/// Envelope gradient for a caller-supplied plan, as used by the unbalanced
/// flows (the marginal penalties carry no mean/covariance sensitivity).
/// The reported value is the transport part `<plan, cost>` only.
pub fn mw2_grad_for_plan(
    mu0: &GmmParams,
    mu1: &GmmParams,
    plan: &TransportPlan,
) -> Result<Mw2Gradient> {
    let cost = CostMatrix::between(mu0, mu1)?;
    let value = plan.cost_against(&cost);
    grad_with_plan(mu0, mu1, value, plan.clone())
}

pub(crate) fn grad_with_plan(
    mu0: &GmmParams,
    mu1: &GmmParams,
    value: f64,
    plan: TransportPlan,
) -> Result<Mw2Gradient> {
    let (k0, k1, d) = (mu0.n_components(), mu1.n_components(), mu0.dim());
    let mut d_means = Array2::<f64>::zeros((k0, d));
    let mut d_covs = Array3::<f64>::zeros((k0, d, d));
    let mut near_singular = false;

    let p = plan.matrix();
    for k in 0..k0 {
        // Mean part: sum_l P_kl * 2 (m_k - m_l').
        for l in 0..k1 {
            let w = p[[k, l]];
            if w == 0.0 {
                continue;
            }
            for a in 0..d {
                d_means[[k, a]] += w * 2.0 * (mu0.means()[[k, a]] - mu1.means()[[l, a]]);
            }
        }

        // Covariance part: d/dSigma [tr Sigma + tr Sigma' - 2 tr sqrt(M)]
        // with M = sqrt(Sigma) Sigma' sqrt(Sigma), chained through both
        // nested square roots.
        let sigma = mu0.covariances()[k].entries();
        let r0 = spd_sqrt(sigma);
        for l in 0..k1 {
            let w = p[[k, l]];
            if w == 0.0 {
                continue;
            }
            let sigma1 = mu1.covariances()[l].entries();
            let m = symmetrise(&r0.dot(sigma1).dot(&r0));
            // W = (1/2) M^{-1/2} via the eigendecomposition, masking
            // non-positive eigenvalues.
            let dec = jacobi_eigh(&m);
            let mut scaled = dec.eigenvectors.clone();
            for j in 0..d {
                let lam = dec.eigenvalues[j];
                let inv = if lam > 0.0 {
                    0.5 / lam.sqrt()
                } else {
                    near_singular = true;
                    0.0
                };
                for i in 0..d {
                    scaled[[i, j]] *= inv;
                }
            }
            let w_half_inv = symmetrise(&scaled.dot(&dec.eigenvectors.t()));

            // d tr sqrt(M) = <N, d sqrt(Sigma)> with
            // N = Sigma' R0 W + W R0 Sigma'; the sqrt differential operator
            // is self-adjoint, so the Sigma-gradient is its value at N.
            let n1 = sigma1.dot(&r0).dot(&w_half_inv);
            let n2 = w_half_inv.dot(&r0).dot(sigma1);
            let n_mat = symmetrise(&(n1 + n2));
            let diff = spd_sqrt_differential(sigma, &n_mat);
            near_singular |= diff.near_singular;
            for a in 0..d {
                for b in 0..d {
                    let kron = if a == b { 1.0 } else { 0.0 };
                    d_covs[[k, a, b]] += w * (kron - 2.0 * diff.matrix[[a, b]]);
                }
            }
        }
    }

    Ok(Mw2Gradient {
        value,
        plan,
        d_means,
        d_covs,
        near_singular,
    })
}
