//! Transport between Gaussian mixtures: closed-form Gaussian W2 and the
//! Bures distance, exact discrete transport by network simplex, the mixture
//! distance MW2 with its envelope gradient, the unbalanced relaxation UMW2,
//! mixture projection, and empirical hooks for the stability bounds.

mod exact;
mod gaussian;
mod mw2;
mod project;
mod stability;
mod unbalanced;

pub use exact::{solve_1d_sorted, solve_discrete_ot};
pub use gaussian::{bures_distance, bures_squared, gaussian_w2};
pub use mw2::{mw2_grad_for_plan, mw2_grad_params, mw2_squared, Mw2Gradient};
pub use project::project_gmm;
pub use stability::{
    check_stability_bounds, one_sample_rhs, random_perturbed_instance, two_sample_rhs, BoundCheck,
    StabilityInstance, StabilityReport,
};
pub use unbalanced::{umw2_from_cost, umw2_squared, UnbalancedConfig};

use crate::error::{CoreError, Result};
use crate::gmm::GmmParams;
use ndarray::Array2;

/// Entries this far below zero are treated as data errors rather than
/// rounding noise.
pub const COST_NEGATIVITY_TOL: f64 = 1e-10;
/// Marginal sums may disagree by at most this much.
pub const MARGINAL_TOL: f64 = 1e-9;

/// Pairwise transport costs between mixture components:
/// `c[k, l] = ||m_k - m_l'||^2 + d_BW^2(Sigma_k, Sigma_l')`.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    c: Array2<f64>,
}

impl CostMatrix {
    /// Validates finiteness and clamps rounding-level negatives to zero.
    pub fn new(c: Array2<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(CoreError::Argument("empty cost matrix".into()));
        }
        let mut c = c;
        for v in c.iter_mut() {
            if !v.is_finite() {
                return Err(CoreError::Argument("non-finite cost entry".into()));
            }
            if *v < -COST_NEGATIVITY_TOL {
                return Err(CoreError::Argument(format!(
                    "cost entry {v} below the negativity tolerance"
                )));
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(Self { c })
    }

    /// Costs between all component pairs of two mixtures.
    pub fn between(mu0: &GmmParams, mu1: &GmmParams) -> Result<Self> {
        if mu0.dim() != mu1.dim() {
            return Err(CoreError::Argument("mixture dimension mismatch".into()));
        }
        let (k0, k1) = (mu0.n_components(), mu1.n_components());
        let mut c = Array2::<f64>::zeros((k0, k1));
        for k in 0..k0 {
            for l in 0..k1 {
                c[[k, l]] = gaussian_w2(
                    mu0.means().row(k),
                    &mu0.covariances()[k],
                    mu1.means().row(l),
                    &mu1.covariances()[l],
                );
            }
        }
        Self::new(c)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.c
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.c.nrows(), self.c.ncols())
    }
}

/// A nonnegative coupling between component weights.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    p: Array2<f64>,
}

impl TransportPlan {
    pub fn new(p: Array2<f64>) -> Result<Self> {
        if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(CoreError::Argument(
                "transport plan entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self { p })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.p
    }

    pub fn row_marginals(&self) -> ndarray::Array1<f64> {
        self.p.sum_axis(ndarray::Axis(1))
    }

    pub fn col_marginals(&self) -> ndarray::Array1<f64> {
        self.p.sum_axis(ndarray::Axis(0))
    }

    pub fn cost_against(&self, c: &CostMatrix) -> f64 {
        self.p
            .iter()
            .zip(c.matrix().iter())
            .map(|(p, c)| p * c)
            .sum()
    }
}
