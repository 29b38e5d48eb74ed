use super::{CostMatrix, TransportPlan};
use crate::error::{CoreError, Result};
use crate::gmm::GmmParams;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Configuration of the unbalanced solver: marginal penalties, the final
/// entropic temperature, and the iteration budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnbalancedConfig {
    pub lambda0: f64,
    pub lambda1: f64,
    pub entropic_eps: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for UnbalancedConfig {
    fn default() -> Self {
        Self {
            lambda0: 1.0,
            lambda1: 1.0,
            entropic_eps: 1e-4,
            max_iter: 200_000,
            tol: 1e-10,
        }
    }
}

impl UnbalancedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda0 <= 0.0 || self.lambda1 <= 0.0 {
            return Err(CoreError::Argument("lambdas must be positive".into()));
        }
        if self.entropic_eps <= 0.0 {
            return Err(CoreError::Argument("entropic_eps must be positive".into()));
        }
        Ok(())
    }
}

/// Generalised KL divergence `sum_k a_k log(a_k / b_k) - a_k + b_k`,
/// penalising destroyed mass as well (the plain `sum a log(a/b)` form would
/// make the zero plan optimal).
pub fn generalized_kl(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    let mut total = 0.0;
    for (&ak, &bk) in a.iter().zip(b.iter()) {
        if ak > 0.0 {
            total += ak * (ak / bk).ln() - ak + bk;
        } else {
            total += bk;
        }
    }
    total
}

/// Unbalanced mixture transport `UMW2^2`: marginal constraints replaced by
/// generalised-KL penalties with weights `lambda0`, `lambda1`.
pub fn umw2_squared(
    mu0: &GmmParams,
    mu1: &GmmParams,
    cfg: &UnbalancedConfig,
) -> Result<(f64, TransportPlan)> {
    let cost = CostMatrix::between(mu0, mu1)?;
    umw2_from_cost(&cost, mu0.weights(), mu1.weights(), cfg)
}

/// Solver entry point on a raw cost matrix; weights need only be positive
/// (mixtures with unnormalised mass are legitimate inputs here).
///
/// Entropic scaling iterations in log domain, with the temperature annealed
/// geometrically (factor 1/2) from 0.1 down to `entropic_eps` and the
/// potentials warm-started across levels. The reported value is the primal
/// objective of the final plan, without the entropic term.
pub fn umw2_from_cost(
    cost: &CostMatrix,
    w0: &Array1<f64>,
    w1: &Array1<f64>,
    cfg: &UnbalancedConfig,
) -> Result<(f64, TransportPlan)> {
    cfg.validate()?;
    let (k0, k1) = cost.shape();
    if w0.len() != k0 || w1.len() != k1 {
        return Err(CoreError::Argument("marginal sizes do not match cost".into()));
    }
    if w0.iter().chain(w1.iter()).any(|&w| w <= 0.0 || !w.is_finite()) {
        return Err(CoreError::Argument("weights must be strictly positive".into()));
    }

    let c = cost.matrix();
    let log_a: Vec<f64> = w0.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = w1.iter().map(|w| w.ln()).collect();

    let mut f = vec![0.0_f64; k0];
    let mut g = vec![0.0_f64; k1];

    let mut levels = Vec::new();
    let mut eps = 0.1_f64;
    while eps > cfg.entropic_eps {
        levels.push(eps);
        eps *= 0.5;
    }
    levels.push(cfg.entropic_eps);

    let mut iterations = 0usize;
    let mut final_converged = false;
    for (level_idx, &eps) in levels.iter().enumerate() {
        let ratio0 = cfg.lambda0 / (cfg.lambda0 + eps);
        let ratio1 = cfg.lambda1 / (cfg.lambda1 + eps);
        let mut level_converged = false;
        // Each annealing level gets its own budget; intermediate levels are
        // warm starts and may stop early without harm.
        for _ in 0..cfg.max_iter {
            iterations += 1;
            let mut delta = 0.0_f64;
            for i in 0..k0 {
                let mut m = f64::NEG_INFINITY;
                for j in 0..k1 {
                    m = m.max((g[j] - c[[i, j]]) / eps);
                }
                let s: f64 = (0..k1)
                    .map(|j| ((g[j] - c[[i, j]]) / eps - m).exp())
                    .sum();
                let lse = m + s.ln();
                let new_f = ratio0 * eps * (log_a[i] - lse);
                delta = delta.max((new_f - f[i]).abs());
                f[i] = new_f;
            }
            for j in 0..k1 {
                let mut m = f64::NEG_INFINITY;
                for i in 0..k0 {
                    m = m.max((f[i] - c[[i, j]]) / eps);
                }
                let s: f64 = (0..k0)
                    .map(|i| ((f[i] - c[[i, j]]) / eps - m).exp())
                    .sum();
                let lse = m + s.ln();
                let new_g = ratio1 * eps * (log_b[j] - lse);
                delta = delta.max((new_g - g[j]).abs());
                g[j] = new_g;
            }
            if delta <= cfg.tol {
                level_converged = true;
                break;
            }
        }
        if level_idx + 1 == levels.len() {
            final_converged = level_converged;
        }
    }

    let eps = cfg.entropic_eps;
    let mut plan = Array2::<f64>::zeros((k0, k1));
    for i in 0..k0 {
        for j in 0..k1 {
            plan[[i, j]] = ((f[i] + g[j] - c[[i, j]]) / eps).exp();
        }
    }
    let plan = TransportPlan::new(plan)?;
    let value = plan.cost_against(cost)
        + cfg.lambda0 * generalized_kl(&plan.row_marginals(), w0)
        + cfg.lambda1 * generalized_kl(&plan.col_marginals(), w1);

    if !final_converged {
        return Err(CoreError::NotConverged {
            iterations,
            last_value: value,
            last_plan: Some(plan.matrix().clone()),
        });
    }
    Ok((value, plan))
}
