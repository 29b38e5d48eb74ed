use super::{Dataset, EmConfig, GmmParams, Responsibilities};
use crate::error::{CoreError, Result};
use crate::linalg::{cholesky, logsumexp, symmetrise, CholeskyFactor, SpdMatrix};
use ndarray::{Array1, Array2};

/// Per-run EM diagnostics: the log-likelihood trace `l(theta_t)` for
/// `t = 0..T` and the terminal fixed-point residual
/// `(1/p) ||theta_T - F(theta_T, X)||^2`.
#[derive(Debug, Clone)]
pub struct EmDiagnostics {
    pub log_likelihoods: Vec<f64>,
    pub fixed_point_residual: f64,
}

/// Log densities `log g_k(x_i)` for every sample/component pair (n x K).
pub(crate) fn log_density_matrix(theta: &GmmParams, x: &Dataset) -> Array2<f64> {
    let (n, k) = (x.n(), theta.n_components());
    let chols: Vec<CholeskyFactor> = theta.covariances().iter().map(cholesky).collect();
    let mut log_g = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        let xi = x.points().row(i);
        for (c, chol) in chols.iter().enumerate() {
            log_g[[i, c]] = super::log_density(theta.means().row(c), chol, xi);
        }
    }
    log_g
}

/// E-step: posterior responsibilities, computed entirely in log space with
/// a log-sum-exp normalisation per sample.
pub fn e_step(theta: &GmmParams, x: &Dataset) -> Responsibilities {
    assert_eq!(theta.dim(), x.dim(), "dimension mismatch");
    let (n, k) = (x.n(), theta.n_components());
    let log_w: Vec<f64> = theta.weights().iter().map(|w| w.ln()).collect();
    let log_g = log_density_matrix(theta, x);
    let mut log_gamma = Array2::<f64>::zeros((n, k));
    let mut row = Array1::<f64>::zeros(k);
    for i in 0..n {
        for c in 0..k {
            row[c] = log_w[c] + log_g[[i, c]];
        }
        let z = logsumexp(row.view()).expect("k >= 1 and finite log densities");
        for c in 0..k {
            log_gamma[[i, c]] = row[c] - z;
        }
    }
    Responsibilities::from_log(log_gamma)
}

/// One M-step: the fixed-point map `F(theta, X)`.
///
/// Weights are copied from the input when `cfg.fix_weights`; covariances are
/// copied when `!cfg.update_covariances`, otherwise each update receives an
/// additive `eps_r I`. Fails with `DegenerateCovariance` when an
/// unregularised update is singular. A component whose responsibility mass
/// underflows to exact zero is carried over unchanged when the weights are
/// fixed and a regulariser is active (its update is 0/0 and its
/// differentials vanish anyway); otherwise the empty component is an error.
pub fn m_step(theta: &GmmParams, x: &Dataset, cfg: &EmConfig) -> Result<GmmParams> {
    let gamma = e_step(theta, x).gamma();
    m_step_from_gamma(theta, x, &gamma, cfg)
}

pub(crate) fn m_step_from_gamma(
    theta: &GmmParams,
    x: &Dataset,
    gamma: &Array2<f64>,
    cfg: &EmConfig,
) -> Result<GmmParams> {
    cfg.validate()?;
    let (n, d, k) = (x.n(), x.dim(), theta.n_components());
    let pts = x.points();

    let mut gamma_sums = Array1::<f64>::zeros(k);
    for i in 0..n {
        for c in 0..k {
            gamma_sums[c] += gamma[[i, c]];
        }
    }

    let carry_empty = cfg.fix_weights && cfg.cov_regulariser > 0.0;
    let mut empty = vec![false; k];
    for c in 0..k {
        if gamma_sums[c] <= 0.0 {
            if carry_empty {
                empty[c] = true;
            } else {
                return Err(CoreError::DegenerateCovariance { index: c });
            }
        }
    }

    let weights = if cfg.fix_weights {
        theta.weights().clone()
    } else {
        &gamma_sums / n as f64
    };

    let mut means = Array2::<f64>::zeros((k, d));
    for i in 0..n {
        for c in 0..k {
            let g = gamma[[i, c]];
            for a in 0..d {
                means[[c, a]] += g * pts[[i, a]];
            }
        }
    }
    for c in 0..k {
        if empty[c] {
            means.row_mut(c).assign(&theta.means().row(c));
            continue;
        }
        let s = gamma_sums[c];
        for a in 0..d {
            means[[c, a]] /= s;
        }
    }

    let covariances: Vec<SpdMatrix> = if cfg.update_covariances {
        let mut covs = Vec::with_capacity(k);
        for c in 0..k {
            if empty[c] {
                covs.push(theta.covariances()[c].clone());
                continue;
            }
            let mut s = Array2::<f64>::zeros((d, d));
            for i in 0..n {
                let g = gamma[[i, c]];
                for a in 0..d {
                    let da = pts[[i, a]] - means[[c, a]];
                    for b in 0..d {
                        s[[a, b]] += g * da * (pts[[i, b]] - means[[c, b]]);
                    }
                }
            }
            s.mapv_inplace(|v| v / gamma_sums[c]);
            let mut s = symmetrise(&s);
            for a in 0..d {
                s[[a, a]] += cfg.cov_regulariser;
            }
            match SpdMatrix::new(s) {
                Ok(m) => covs.push(m),
                Err(_) => return Err(CoreError::DegenerateCovariance { index: c }),
            }
        }
        covs
    } else {
        theta.covariances().to_vec()
    };

    GmmParams::new(weights, means, covariances)
}

/// Squared flat-parameter distance divided by `p = K + Kd + Kd^2`.
pub fn fixed_point_residual(theta: &GmmParams, x: &Dataset, cfg: &EmConfig) -> Result<f64> {
    let next = m_step(theta, x, cfg)?;
    let mut sq = 0.0;
    for (a, b) in theta.weights().iter().zip(next.weights().iter()) {
        sq += (a - b) * (a - b);
    }
    for (a, b) in theta.means().iter().zip(next.means().iter()) {
        sq += (a - b) * (a - b);
    }
    for (ca, cb) in theta.covariances().iter().zip(next.covariances().iter()) {
        for (a, b) in ca.entries().iter().zip(cb.entries().iter()) {
            sq += (a - b) * (a - b);
        }
    }
    Ok(sq / theta.flat_len() as f64)
}

/// Observed-data log-likelihood `sum_i log sum_k w_k g_k(x_i)`, evaluated
/// with one log-sum-exp per point.
pub fn log_likelihood(theta: &GmmParams, x: &Dataset) -> f64 {
    let (n, k) = (x.n(), theta.n_components());
    let log_w: Vec<f64> = theta.weights().iter().map(|w| w.ln()).collect();
    let log_g = log_density_matrix(theta, x);
    let mut row = Array1::<f64>::zeros(k);
    let mut total = 0.0;
    for i in 0..n {
        for c in 0..k {
            row[c] = log_w[c] + log_g[[i, c]];
        }
        total += logsumexp(row.view()).expect("k >= 1");
    }
    total
}

/// Runs `T` composed E/M steps and reports diagnostics.
pub fn em_fit(theta0: &GmmParams, x: &Dataset, cfg: &EmConfig) -> Result<(GmmParams, EmDiagnostics)> {
    let mut theta = theta0.clone();
    let mut lls = Vec::with_capacity(cfg.iterations + 1);
    lls.push(log_likelihood(&theta, x));
    for _ in 0..cfg.iterations {
        theta = m_step(&theta, x, cfg)?;
        lls.push(log_likelihood(&theta, x));
    }
    let residual = fixed_point_residual(&theta, x, cfg)?;
    Ok((
        theta,
        EmDiagnostics {
            log_likelihoods: lls,
            fixed_point_residual: residual,
        },
    ))
}

/// The full iterate sequence `theta_0, ..., theta_T`; the gradient methods
/// replay it when accumulating Jacobians.
pub fn em_trajectory(theta0: &GmmParams, x: &Dataset, cfg: &EmConfig) -> Result<Vec<GmmParams>> {
    let mut out = Vec::with_capacity(cfg.iterations + 1);
    out.push(theta0.clone());
    for t in 0..cfg.iterations {
        let next = m_step(&out[t], x, cfg)?;
        out.push(next);
    }
    Ok(out)
}
