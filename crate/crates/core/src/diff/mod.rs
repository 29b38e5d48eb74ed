//! Explicit partial differentials of the EM map `F`, their assembly into
//! flat block Jacobians, and the gradient strategies: exact unrolled chain
//! rule (AD), implicit solve at the terminal iterate (AI), last-step-only
//! (OS), a central finite-difference oracle (FD), and warm-start stepping.
//!
//! Flat layout of a parameter point: `[w (K) | m row-major (K d) |
//! Sigma row-major (K d^2)]`, with `p = K + K d + K d^2`.

mod context;
mod fmap;
mod gamma;
mod methods;

pub use context::DiffContext;
pub use fmap::{dF_dtheta, dF_dx, df_dx_vjp};
pub use gamma::{d_gamma, GammaDifferentials};
pub use methods::{
    jacobian_ad, jacobian_ai, jacobian_fd, jacobian_os, pullback_ad, pullback_ai, pullback_os,
    warm_start_step,
};

use crate::error::{CoreError, Result};
use crate::gmm::GmmParams;
use crate::linalg::SpdMatrix;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

/// Flat coordinate layout for a `(K, d)` mixture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatLayout {
    pub k: usize,
    pub d: usize,
}

impl FlatLayout {
    pub fn of(theta: &GmmParams) -> Self {
        Self {
            k: theta.n_components(),
            d: theta.dim(),
        }
    }

    pub fn len(&self) -> usize {
        self.k + self.k * self.d + self.k * self.d * self.d
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn w(&self, k: usize) -> usize {
        k
    }

    #[inline]
    pub fn m(&self, k: usize, a: usize) -> usize {
        self.k + k * self.d + a
    }

    #[inline]
    pub fn sig(&self, k: usize, a: usize, b: usize) -> usize {
        self.k + self.k * self.d + k * self.d * self.d + a * self.d + b
    }
}

/// A mixture parameter point flattened into a single vector.
#[derive(Debug, Clone)]
pub struct FlatParamVector {
    pub layout: FlatLayout,
    pub data: Array1<f64>,
}

impl FlatParamVector {
    pub fn from_params(theta: &GmmParams) -> Self {
        let layout = FlatLayout::of(theta);
        let mut data = Array1::<f64>::zeros(layout.len());
        for k in 0..layout.k {
            data[layout.w(k)] = theta.weights()[k];
            for a in 0..layout.d {
                data[layout.m(k, a)] = theta.means()[[k, a]];
            }
            let cov = theta.covariances()[k].entries();
            for a in 0..layout.d {
                for b in 0..layout.d {
                    data[layout.sig(k, a, b)] = cov[[a, b]];
                }
            }
        }
        Self { layout, data }
    }

    /// Rebuilds validated mixture parameters; fails when the vector has left
    /// the feasible set (simplex / SPD constraints).
    pub fn to_params(&self) -> Result<GmmParams> {
        let (k, d) = (self.layout.k, self.layout.d);
        let weights = Array1::from_iter((0..k).map(|c| self.data[self.layout.w(c)]));
        let mut means = Array2::<f64>::zeros((k, d));
        for c in 0..k {
            for a in 0..d {
                means[[c, a]] = self.data[self.layout.m(c, a)];
            }
        }
        let mut covs = Vec::with_capacity(k);
        for c in 0..k {
            let mut m = Array2::<f64>::zeros((d, d));
            for a in 0..d {
                for b in 0..d {
                    m[[a, b]] = self.data[self.layout.sig(c, a, b)];
                }
            }
            covs.push(SpdMatrix::new(m)?);
        }
        GmmParams::new(weights, means, covs)
    }
}

/// The two block Jacobians of one EM step.
#[derive(Debug, Clone)]
pub struct EmJacobians {
    /// `dF/dtheta`, p x p.
    pub d_theta: Array2<f64>,
    /// `dF/dX`, p x (n d).
    pub d_x: Array2<f64>,
}

/// Which gradient strategy produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum GradMethod {
    Ad,
    Ai,
    Os,
    Fd,
    Warm,
}

impl std::fmt::Display for GradMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GradMethod::Ad => "AD",
            GradMethod::Ai => "AI",
            GradMethod::Os => "OS",
            GradMethod::Fd => "FD",
            GradMethod::Warm => "WARM",
        };
        write!(f, "{s}")
    }
}

/// Output of a gradient strategy: the p x (n d) Jacobian plus the
/// fixed-point residual and the spectral norm of `dF/dtheta` measured at the
/// method's reference iterate.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub method: GradMethod,
    pub jacobian: Array2<f64>,
    pub fixed_point_residual: f64,
    pub spectral_norm_df_dtheta: f64,
}

/// JSON-facing summary of a [`GradientReport`]; the matrix payload, when
/// kept, is stored separately in the shared binary matrix format.
#[derive(Debug, Serialize, Deserialize)]
pub struct GradientReportSummary {
    pub method: GradMethod,
    pub fixed_point_residual: f64,
    pub spectral_norm_df_dtheta: f64,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl GradientReport {
    pub fn summary(&self, payload: Option<String>) -> GradientReportSummary {
        GradientReportSummary {
            method: self.method,
            fixed_point_residual: self.fixed_point_residual,
            spectral_norm_df_dtheta: self.spectral_norm_df_dtheta,
            rows: self.jacobian.nrows(),
            cols: self.jacobian.ncols(),
            payload,
        }
    }

    /// Relative mean-squared error against a baseline Jacobian:
    /// `||J - J_ref||^2 / ||J_ref||^2`.
    pub fn rel_mse(&self, baseline: &GradientReport) -> f64 {
        rel_mse(&self.jacobian, &baseline.jacobian)
    }
}

pub fn rel_mse(j: &Array2<f64>, j_ref: &Array2<f64>) -> f64 {
    let num: f64 = j
        .iter()
        .zip(j_ref.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let den: f64 = j_ref.iter().map(|b| b * b).sum();
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

pub(crate) fn check_shapes(theta: &GmmParams, x: &crate::gmm::Dataset) -> Result<()> {
    if theta.dim() != x.dim() {
        return Err(CoreError::Argument(format!(
            "mixture dimension {} does not match data dimension {}",
            theta.dim(),
            x.dim()
        )));
    }
    Ok(())
}
