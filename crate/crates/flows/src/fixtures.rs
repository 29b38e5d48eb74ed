//! Pathological-case fixtures: the three-atom energy with a strict
//! non-global local minimum, the vanishing-gradient construction through a
//! covariance-frozen EM step, and the two-atom landscape whose interior
//! local minima are all global.

use crate::{FlowsError, Result};
use diffem_core::diff::pullback_ad;
use diffem_core::gmm::{m_step, Dataset, EmConfig, GmmParams};
use diffem_core::linalg::SpdMatrix;
use diffem_core::ot::{mw2_grad_params, solve_1d_sorted};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `E_3(alpha, eta) = W2^2(mu_{alpha,eta}, nu)` for the three-atom family
/// `(1/6+a1) delta_{eta1} + (1/6+a2) delta_{eta2} + (2/3-a1-a2)
/// delta_{1+eta3}` against `nu = (delta_0 + delta_{1-eps} +
/// delta_{1+eps}) / 3`, evaluated by the exact sorted 1D coupling.
pub fn e3_energy(alpha: [f64; 2], eta: [f64; 3], epsilon: f64) -> Result<f64> {
    let support = [eta[0], eta[1], 1.0 + eta[2]];
    let weights = [
        1.0 / 6.0 + alpha[0],
        1.0 / 6.0 + alpha[1],
        2.0 / 3.0 - alpha[0] - alpha[1],
    ];
    if weights.iter().any(|&w| w < 0.0) {
        return Err(FlowsError::Config("weights left the simplex".into()));
    }
    let target_support = [0.0, 1.0 - epsilon, 1.0 + epsilon];
    let third = [1.0 / 3.0; 3];
    solve_1d_sorted(&support, &weights, &target_support, &third)
        .map_err(FlowsError::Core)
}

#[derive(Debug, Clone)]
pub struct E3Report {
    pub epsilon: f64,
    pub value_at_origin: f64,
    /// `min E_3(delta) - E_3(0)` over the probed grid directions outside
    /// the flat direction (1, -1, 0, 0, 0).
    pub grid_min_excess: f64,
    pub grid_points_tested: usize,
    /// `E_3` at parameters realising `mu = nu` (outside the restricted
    /// region); zero up to rounding.
    pub value_at_global: f64,
}

/// Scans a radius ball around the origin of the `(alpha, eta)` chart,
/// avoiding the flat direction, and evaluates the claimed local-minimum
/// value `(2/3) eps^2`.
pub fn fixture_e3_landscape(epsilon: f64, radius: f64, n_random: usize) -> Result<E3Report> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(FlowsError::Config("epsilon must lie in (0, 1/2)".into()));
    }
    let value_at_origin = e3_energy([0.0, 0.0], [0.0, 0.0, 0.0], epsilon)?;

    let flat = [1.0, -1.0, 0.0, 0.0, 0.0];
    let flat_norm = std::f64::consts::SQRT_2;
    let mut dirs: Vec<[f64; 5]> = Vec::new();
    for axis in 0..5 {
        for sign in [-1.0, 1.0] {
            let mut v = [0.0; 5];
            v[axis] = sign;
            dirs.push(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xE3);
    while dirs.len() < 10 + n_random {
        let mut v = [0.0; 5];
        let mut norm = 0.0;
        for a in v.iter_mut() {
            *a = rng.gen::<f64>() - 0.5;
            norm += *a * *a;
        }
        let norm = norm.sqrt();
        if norm < 1e-6 {
            continue;
        }
        for a in v.iter_mut() {
            *a /= norm;
        }
        dirs.push(v);
    }

    let mut grid_min_excess = f64::INFINITY;
    let mut tested = 0usize;
    for dir in &dirs {
        let dot: f64 = dir.iter().zip(flat.iter()).map(|(a, b)| a * b).sum();
        let norm: f64 = dir.iter().map(|a| a * a).sum::<f64>().sqrt();
        // Skip directions essentially parallel to the flat line, where the
        // energy is constant by exchange symmetry.
        if (dot / (norm * flat_norm)).abs() > 0.999 {
            continue;
        }
        let alpha = [radius * dir[0] / norm, radius * dir[1] / norm];
        let eta = [
            radius * dir[2] / norm,
            radius * dir[3] / norm,
            radius * dir[4] / norm,
        ];
        let v = e3_energy(alpha, eta, epsilon)?;
        grid_min_excess = grid_min_excess.min(v - value_at_origin);
        tested += 1;
    }

    // mu = nu is reachable only outside the restricted box: alpha at the
    // boundary (1/6, 1/6) and eta = (0, 1-eps, eps) puts an atom of mass
    // 1/3 on each target location.
    let value_at_global = e3_energy([1.0 / 6.0, 1.0 / 6.0], [0.0, 1.0 - epsilon, epsilon], epsilon)?;

    Ok(E3Report {
        epsilon,
        value_at_origin,
        grid_min_excess,
        grid_points_tested: tested,
        value_at_global,
    })
}

#[derive(Debug, Clone)]
pub struct VanishingGradientReport {
    pub epsilon: f64,
    /// Euclidean norm of the energy gradient with respect to the data.
    pub grad_norm: f64,
    /// Sup-norm drift of (weights, means) after the single EM step.
    pub param_drift: f64,
    pub energy: f64,
}

/// The essential-stationary-point construction: six points, one EM step
/// with frozen covariances from the trapped initialisation, and the energy
/// gradient computed by the unrolled chain rule. As `eps` shrinks the
/// gradient norm collapses like `eps^{-2} e^{-1/eps^2}`.
pub fn fixture_vanishing_gradient(epsilon: f64) -> Result<VanishingGradientReport> {
    if epsilon <= 0.0 {
        return Err(FlowsError::Config("epsilon must be positive".into()));
    }
    let w = 2.0 / 3.0;
    let m_star = 0.5;
    let var = epsilon * epsilon;

    let x = Dataset::new_unchecked(
        Array2::from_shape_vec(
            (6, 1),
            vec![
                -epsilon,
                epsilon,
                m_star - epsilon,
                m_star + epsilon,
                m_star - epsilon,
                m_star + epsilon,
            ],
        )
        .expect("shape"),
    );
    let theta_star = GmmParams::new(
        array![1.0 - w, w],
        array![[0.0], [m_star]],
        vec![
            SpdMatrix::new(array![[var]]).map_err(FlowsError::Core)?,
            SpdMatrix::new(array![[var]]).map_err(FlowsError::Core)?,
        ],
    )
    .map_err(FlowsError::Core)?;
    let nu = GmmParams::new(
        array![w, 1.0 - w],
        array![[0.0], [1.0]],
        vec![
            SpdMatrix::new(array![[var]]).map_err(FlowsError::Core)?,
            SpdMatrix::new(array![[var]]).map_err(FlowsError::Core)?,
        ],
    )
    .map_err(FlowsError::Core)?;

    let cfg = EmConfig {
        iterations: 1,
        fix_weights: false,
        update_covariances: false,
        cov_regulariser: 0.0,
        seed: 0,
    };
    let theta_1 = m_step(&theta_star, &x, &cfg).map_err(FlowsError::Core)?;

    let mut param_drift = 0.0_f64;
    for (a, b) in theta_star.weights().iter().zip(theta_1.weights().iter()) {
        param_drift = param_drift.max((a - b).abs());
    }
    for (a, b) in theta_star.means().iter().zip(theta_1.means().iter()) {
        param_drift = param_drift.max((a - b).abs());
    }

    let grad = mw2_grad_params(&theta_1, &nu).map_err(FlowsError::Core)?;
    let g = crate::flow::pack_loss_grad(2, 1, &grad.d_means, &grad.d_covs);
    let (grad_x, _) = pullback_ad(&theta_star, &x, &cfg, &g).map_err(FlowsError::Core)?;
    let grad_norm = grad_x.iter().map(|v| v * v).sum::<f64>().sqrt();

    Ok(VanishingGradientReport {
        epsilon,
        grad_norm,
        param_drift,
        energy: grad.value,
    })
}

/// Exact two-atom transport energy `E_2(x1, x2, alpha) =
/// W2^2(alpha d_{x1} + (1-alpha) d_{x2}, gamma d_{y1} + (1-gamma) d_{y2})`
/// in one dimension, via the two candidate couplings.
pub fn e2_energy(x1: f64, x2: f64, alpha: f64, gamma: f64, y1: f64, y2: f64) -> f64 {
    let c = |a: f64, b: f64| (a - b) * (a - b);
    let e_minus = |x1: f64, x2: f64, alpha: f64| {
        if alpha <= gamma {
            alpha * c(x1, y1) + (gamma - alpha) * c(x2, y1) + (1.0 - gamma) * c(x2, y2)
        } else {
            gamma * c(x1, y1) + (alpha - gamma) * c(x1, y2) + (1.0 - alpha) * c(x2, y2)
        }
    };
    e_minus(x1, x2, alpha).min(e_minus(x2, x1, 1.0 - alpha))
}

#[derive(Debug, Clone)]
pub struct N2Report {
    pub gamma: f64,
    /// Endpoints of all multi-start descents, as (x1, x2, alpha, distance
    /// to the target configuration up to permutation).
    pub endpoints: Vec<(f64, f64, f64, f64)>,
    pub max_distance_to_target: f64,
    /// One-sided directional derivative at the boundary point
    /// `(-1, 1-gamma, 0)` along increasing alpha; nonnegative there.
    pub boundary_alpha_derivative: f64,
    pub boundary_x_grad_norm: f64,
    /// Energy at mu = nu.
    pub value_at_target: f64,
}

/// Grid scan plus multi-start gradient descent of the two-atom landscape.
/// Every interior local minimiser found is the target configuration up to
/// component permutation.
pub fn fixture_n2_landscape(gamma: f64, y1: f64, y2: f64, n_starts: usize) -> Result<N2Report> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(FlowsError::Config("gamma must lie in (0, 1)".into()));
    }
    if y1 == y2 {
        return Err(FlowsError::Config("targets must be distinct".into()));
    }
    let energy = |z: &[f64; 3]| e2_energy(z[0], z[1], z[2], gamma, y1, y2);
    let h = 1e-7;
    let grad = |z: &[f64; 3]| -> [f64; 3] {
        let mut g = [0.0; 3];
        for i in 0..3 {
            let mut zp = *z;
            let mut zm = *z;
            zp[i] += h;
            zm[i] -= h;
            g[i] = (energy(&zp) - energy(&zm)) / (2.0 * h);
        }
        g
    };

    let lo = y1.min(y2) - 1.0;
    let hi = y1.max(y2) + 1.0;
    let mut rng = ChaCha8Rng::seed_from_u64(0x2A);
    let mut endpoints = Vec::with_capacity(n_starts);
    let mut max_distance = 0.0_f64;

    for _ in 0..n_starts {
        let mut z = [
            lo + (hi - lo) * rng.gen::<f64>(),
            lo + (hi - lo) * rng.gen::<f64>(),
            0.15 + 0.7 * rng.gen::<f64>(),
        ];
        let mut e = energy(&z);
        let mut lr = 0.25;
        for _ in 0..20_000 {
            let g = grad(&z);
            let gnorm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            if gnorm < 1e-12 || lr < 1e-15 {
                break;
            }
            let mut trial = [z[0] - lr * g[0], z[1] - lr * g[1], z[2] - lr * g[2]];
            trial[2] = trial[2].clamp(1e-4, 1.0 - 1e-4);
            let et = energy(&trial);
            if et < e {
                z = trial;
                e = et;
                lr *= 1.15;
            } else {
                lr *= 0.5;
            }
        }
        // Distance to the target configuration up to permutation.
        let d1 = (z[0] - y1).abs().max((z[1] - y2).abs()).max((z[2] - gamma).abs());
        let d2 = (z[0] - y2)
            .abs()
            .max((z[1] - y1).abs())
            .max((z[2] - (1.0 - gamma)).abs());
        let dist = d1.min(d2);
        max_distance = max_distance.max(dist);
        endpoints.push((z[0], z[1], z[2], dist));
    }

    // Boundary stationarity at z* = (-1, 1-gamma, 0) for y = (0, 1): the
    // feasible alpha direction has a strictly positive one-sided slope and
    // the position gradients vanish.
    let zs = [-1.0, 1.0 - gamma, 0.0];
    let local = |z: &[f64; 3]| {
        // Explicit expansion valid near z*: all mass of the first target
        // atom group pairs as alpha -> 0.
        z[2] * z[0] * z[0] + (gamma - z[2]) * z[1] * z[1] + (1.0 - gamma) * (z[1] - 1.0) * (z[1] - 1.0)
    };
    let boundary_alpha_derivative = (local(&[zs[0], zs[1], h]) - local(&zs)) / h;
    let gx1 = (local(&[zs[0] + h, zs[1], 0.0]) - local(&[zs[0] - h, zs[1], 0.0])) / (2.0 * h);
    let gx2 = (local(&[zs[0], zs[1] + h, 0.0]) - local(&[zs[0], zs[1] - h, 0.0])) / (2.0 * h);
    let boundary_x_grad_norm = (gx1 * gx1 + gx2 * gx2).sqrt();

    let value_at_target = e2_energy(y1, y2, gamma, gamma, y1, y2);

    Ok(N2Report {
        gamma,
        endpoints,
        max_distance_to_target: max_distance,
        boundary_alpha_derivative,
        boundary_x_grad_norm,
        value_at_target,
    })
}

/// Aggregated fixture results, JSON-ready for the command line.
#[derive(Debug, serde::Serialize)]
pub struct FixtureSummary {
    pub e3_value: f64,
    pub e3_expected: f64,
    pub e3_grid_min_excess: f64,
    pub vanishing_grad_small: f64,
    pub vanishing_grad_mild: f64,
    pub n2_max_distance: f64,
}
