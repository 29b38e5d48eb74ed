//! Gaussian mixture parameters, densities, the E/M steps, the EM loop in
//! standard and fixed-weights variants, initialisation and sampling.

mod density;
mod em;
mod init;
mod sample;

pub use density::log_density;
pub(crate) use em::log_density_matrix;
pub use em::{
    e_step, em_fit, em_trajectory, fixed_point_residual, log_likelihood, m_step, EmDiagnostics,
};
pub use init::kmeanspp_init;
pub use sample::sample_gmm;

use crate::error::{CoreError, Result};
use crate::linalg::{jacobi_eigh, SpdMatrix};
use ndarray::{Array1, Array2};

/// Tolerance on `sum w_k = 1`.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;
/// Relative rank tolerance for the general-position check.
pub const GENERAL_POSITION_TOL: f64 = 1e-12;

/// A point `theta` in the parameter space: simplex weights, component means
/// and SPD covariances.
#[derive(Debug, Clone)]
pub struct GmmParams {
    weights: Array1<f64>,
    means: Array2<f64>,
    covariances: Vec<SpdMatrix>,
}

impl GmmParams {
    /// Validates the simplex and covariance invariants. Weights must be
    /// positive, at most one, and sum to one within [`WEIGHT_SUM_TOL`].
    pub fn new(
        weights: Array1<f64>,
        means: Array2<f64>,
        covariances: Vec<SpdMatrix>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(CoreError::Argument("mixture needs at least one component".into()));
        }
        if means.nrows() != k || covariances.len() != k {
            return Err(CoreError::Argument(format!(
                "component count mismatch: {} weights, {} means, {} covariances",
                k,
                means.nrows(),
                covariances.len()
            )));
        }
        let d = means.ncols();
        if d == 0 {
            return Err(CoreError::Argument("dimension must be positive".into()));
        }
        for cov in &covariances {
            if cov.dim() != d {
                return Err(CoreError::Argument("covariance dimension mismatch".into()));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(CoreError::Argument(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        if weights.iter().any(|&w| w <= 0.0 || w > 1.0) {
            return Err(CoreError::Argument("weights must lie in (0, 1]".into()));
        }
        Ok(Self {
            weights,
            means,
            covariances,
        })
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn means(&self) -> &Array2<f64> {
        &self.means
    }

    pub fn covariances(&self) -> &[SpdMatrix] {
        &self.covariances
    }

    /// Flat parameter count `p = K + K d + K d^2`.
    pub fn flat_len(&self) -> usize {
        let (k, d) = (self.n_components(), self.dim());
        k + k * d + k * d * d
    }

    /// Reorders components; used by the permutation-equivariance tests.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.n_components();
        if perm.len() != k {
            return Err(CoreError::Argument("permutation length mismatch".into()));
        }
        let weights = Array1::from_iter(perm.iter().map(|&j| self.weights[j]));
        let mut means = Array2::zeros(self.means.raw_dim());
        for (i, &j) in perm.iter().enumerate() {
            means.row_mut(i).assign(&self.means.row(j));
        }
        let covariances = perm.iter().map(|&j| self.covariances[j].clone()).collect();
        Self::new(weights, means, covariances)
    }

    /// Largest covariance eigenvalue across components; drives the
    /// `1e-4 * s_max` regularisation heuristic used by the experiment
    /// drivers.
    pub fn max_cov_eigenvalue(&self) -> f64 {
        self.covariances
            .iter()
            .map(|c| {
                let dec = jacobi_eigh(c.entries());
                dec.eigenvalues[dec.eigenvalues.len() - 1]
            })
            .fold(0.0, f64::max)
    }
}

/// The differentiation variable: `n` points in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    points: Array2<f64>,
}

impl Dataset {
    /// Validates `n >= d + 1` and the general-position screen: the points
    /// centred at their empirical mean must span `R^d` (rank check on the
    /// centred Gram matrix).
    pub fn new(points: Array2<f64>) -> Result<Self> {
        let (n, d) = (points.nrows(), points.ncols());
        if n == 0 || d == 0 {
            return Err(CoreError::Argument("dataset must be non-empty".into()));
        }
        if n < d + 1 {
            return Err(CoreError::Argument(format!(
                "need at least d+1 = {} points, got {n}",
                d + 1
            )));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::Argument("dataset contains non-finite values".into()));
        }
        let mean = points.mean_axis(ndarray::Axis(0)).expect("n > 0");
        let mut gram = Array2::<f64>::zeros((d, d));
        for i in 0..n {
            for a in 0..d {
                let xa = points[[i, a]] - mean[a];
                for b in 0..d {
                    gram[[a, b]] += xa * (points[[i, b]] - mean[b]);
                }
            }
        }
        let dec = jacobi_eigh(&gram);
        let lmax = dec.eigenvalues[d - 1].max(0.0);
        let lmin = dec.eigenvalues[0];
        if lmax <= 0.0 || lmin <= GENERAL_POSITION_TOL * lmax {
            return Err(CoreError::Argument(
                "points are not in general position (centred rank < d)".into(),
            ));
        }
        Ok(Self { points })
    }

    /// Skips validation. Used by samplers and by drivers that regularise
    /// covariances explicitly (`eps_r > 0`), where rank-deficient clouds are
    /// legitimate inputs.
    pub fn new_unchecked(points: Array2<f64>) -> Self {
        Self { points }
    }

    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn into_points(self) -> Array2<f64> {
        self.points
    }
}

/// Posterior responsibilities, held in log space for stability and
/// exponentiated on demand.
#[derive(Debug, Clone)]
pub struct Responsibilities {
    log_gamma: Array2<f64>,
}

impl Responsibilities {
    pub(crate) fn from_log(log_gamma: Array2<f64>) -> Self {
        Self { log_gamma }
    }

    pub fn log_gamma(&self) -> &Array2<f64> {
        &self.log_gamma
    }

    /// `gamma_ik` exponentiated; rows sum to one.
    pub fn gamma(&self) -> Array2<f64> {
        self.log_gamma.mapv(f64::exp)
    }

    pub fn n(&self) -> usize {
        self.log_gamma.nrows()
    }

    pub fn n_components(&self) -> usize {
        self.log_gamma.ncols()
    }
}

/// EM loop configuration.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmConfig {
    /// Number of EM iterations `T`.
    pub iterations: usize,
    /// Keep the initial weights through every M-step.
    pub fix_weights: bool,
    /// Update covariances in the M-step (disabled by the vanishing-gradient
    /// construction).
    pub update_covariances: bool,
    /// Additive `eps_r I` regulariser applied to updated covariances.
    pub cov_regulariser: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            fix_weights: false,
            update_covariances: true,
            cov_regulariser: 0.0,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cov_regulariser < 0.0 {
            return Err(CoreError::Argument("cov_regulariser must be >= 0".into()));
        }
        Ok(())
    }
}
