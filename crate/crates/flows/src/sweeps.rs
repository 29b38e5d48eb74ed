//! Quantitative studies: the gradient-method comparison over n/K/T grids
//! and the sample-complexity study of the mixture distance under EM
//! estimation. Both parallelise over (cell, repeat) pairs with independent
//! seeded streams and deterministic result placement.

use crate::{FlowsError, Result};
use diffem_core::diff::{jacobian_ad, jacobian_ai, jacobian_os};
use diffem_core::gmm::{em_trajectory, kmeanspp_init, sample_gmm, EmConfig, GmmParams};
use diffem_core::linalg::{symmetrise, SpdMatrix};
use diffem_core::ot::mw2_squared;
use diffem_core::CoreError;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    N,
    K,
    T,
}

impl std::fmt::Display for SweepParam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepParam::N => write!(f, "n"),
            SweepParam::K => write!(f, "K"),
            SweepParam::T => write!(f, "T"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCompareConfig {
    pub param: SweepParam,
    pub values: Vec<usize>,
    /// Base values; the swept parameter is overridden per cell.
    pub n: usize,
    pub k: usize,
    pub t: usize,
    pub d: usize,
    pub repeats: usize,
    pub eps_r: f64,
    pub seed: u64,
    /// Seeds of the mixture bank (one mixture per entry, increasingly
    /// ill-conditioned).
    pub bank_seeds: Vec<u64>,
}

impl Default for GradCompareConfig {
    fn default() -> Self {
        Self {
            param: SweepParam::T,
            values: vec![1, 2, 5, 10, 20, 40],
            n: 200,
            k: 3,
            t: 30,
            d: 3,
            repeats: 20,
            eps_r: 1e-9,
            seed: 0,
            bank_seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCompareRow {
    pub param: String,
    pub value: usize,
    pub gmm_id: usize,
    pub repeat: usize,
    pub fp_mse: f64,
    pub spectral_norm: f64,
    pub relmse_os: f64,
    pub relmse_ai: f64,
    /// Set when the implicit solve failed (degenerate fixed point); the
    /// cell is recorded, not fatal.
    pub ai_singular: bool,
}

#[derive(Debug, Clone)]
pub struct GradCompareReport {
    pub rows: Vec<GradCompareRow>,
}

/// Random dense mixture; `spread` in (0, 1] shrinks the smallest
/// eigenvalues, making the mixture harder to fit.
fn bank_gmm(d: usize, k: usize, seed: u64, conditioning: f64) -> GmmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = Array1::from_elem(k, 1.0 / k as f64);
    let means = Array2::from_shape_fn((k, d), |_| 4.0 * (rng.gen::<f64>() - 0.5));
    let covs = (0..k)
        .map(|_| {
            let a = Array2::from_shape_fn((d, d), |_| rng.gen::<f64>() - 0.5);
            let mut s = a.dot(&a.t()) * 0.3;
            for i in 0..d {
                s[[i, i]] += conditioning;
            }
            SpdMatrix::new(symmetrise(&s)).expect("constructed SPD")
        })
        .collect();
    GmmParams::new(weights, means, covs).expect("valid mixture")
}

/// Mixture bank in the spirit of the comparison study: the first entry is
/// well conditioned, later entries have increasingly degenerate
/// covariances.
pub fn default_gmm_bank(d: usize, k: usize, seeds: &[u64]) -> Vec<GmmParams> {
    seeds
        .iter()
        .enumerate()
        .map(|(i, &s)| bank_gmm(d, k, s, 0.4 / (10f64.powi(i as i32))))
        .collect()
}

pub fn run_gradient_comparison(cfg: &GradCompareConfig) -> Result<GradCompareReport> {
    if cfg.values.is_empty() || cfg.repeats == 0 || cfg.bank_seeds.is_empty() {
        return Err(FlowsError::Config("empty sweep grid".into()));
    }
    let mut cells = Vec::new();
    for (vi, &value) in cfg.values.iter().enumerate() {
        for (gi, &bank_seed) in cfg.bank_seeds.iter().enumerate() {
            for rep in 0..cfg.repeats {
                cells.push((vi, value, gi, bank_seed, rep));
            }
        }
    }

    let rows: Vec<GradCompareRow> = cells
        .par_iter()
        .map(|&(_vi, value, gi, bank_seed, rep)| {
            let (mut n, mut k, mut t) = (cfg.n, cfg.k, cfg.t);
            match cfg.param {
                SweepParam::N => n = value,
                SweepParam::K => k = value,
                SweepParam::T => t = value,
            }
            let gmm = bank_gmm(cfg.d, k, bank_seed, 0.4 / 10f64.powi(gi as i32));
            let sample_seed = cfg
                .seed
                .wrapping_mul(0x9E3779B97F4A7C15)
                .wrapping_add((value as u64) << 32)
                .wrapping_add((gi as u64) << 16)
                .wrapping_add(rep as u64);
            let x = sample_gmm(&gmm, n, sample_seed);
            let em = EmConfig {
                iterations: t,
                cov_regulariser: cfg.eps_r,
                ..EmConfig::default()
            };
            let run = || -> std::result::Result<GradCompareRow, CoreError> {
                let theta0 = kmeanspp_init(&x, k, sample_seed ^ 0xABCD, 1e-6)?;
                let traj = em_trajectory(&theta0, &x, &em)?;
                let ad = jacobian_ad(&theta0, &x, &em)?;
                let os = jacobian_os(&traj[em.iterations - 1], &x, &em)?;
                let (relmse_ai, ai_singular) =
                    match jacobian_ai(traj.last().unwrap(), &x, &em) {
                        Ok(ai) => (ai.rel_mse(&ad), false),
                        Err(CoreError::SingularSystem { .. }) => (f64::NAN, true),
                        Err(e) => return Err(e),
                    };
                Ok(GradCompareRow {
                    param: cfg.param.to_string(),
                    value,
                    gmm_id: gi,
                    repeat: rep,
                    fp_mse: ad.fixed_point_residual,
                    spectral_norm: ad.spectral_norm_df_dtheta,
                    relmse_os: os.rel_mse(&ad),
                    relmse_ai,
                    ai_singular,
                })
            };
            run().unwrap_or(GradCompareRow {
                param: cfg.param.to_string(),
                value,
                gmm_id: gi,
                repeat: rep,
                fp_mse: f64::NAN,
                spectral_norm: f64::NAN,
                relmse_os: f64::NAN,
                relmse_ai: f64::NAN,
                ai_singular: true,
            })
        })
        .collect();

    Ok(GradCompareReport { rows })
}

fn quantiles(values: &mut Vec<f64>) -> Option<(f64, f64, f64)> {
    values.retain(|v| v.is_finite());
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| values[((values.len() - 1) as f64 * p).round() as usize];
    Some((q(0.25), q(0.5), q(0.75)))
}

impl GradCompareReport {
    pub fn detail_csv(&self) -> String {
        let mut out = String::from(
            "param,value,gmm_id,repeat,fp_mse,spectral_norm,relmse_os,relmse_ai,ai_singular\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
                r.param,
                r.value,
                r.gmm_id,
                r.repeat,
                r.fp_mse,
                r.spectral_norm,
                r.relmse_os,
                r.relmse_ai,
                r.ai_singular
            ));
        }
        out
    }

    /// Per-(value, mixture) medians and interquartile ranges.
    pub fn summary_csv(&self) -> String {
        let mut keys: Vec<(usize, usize)> = self
            .rows
            .iter()
            .map(|r| (r.value, r.gmm_id))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        keys.sort();
        let mut out = String::from(
            "param,value,gmm_id,metric,q25,median,q75\n",
        );
        for (value, gmm_id) in keys {
            for (metric, pick) in [
                ("fp_mse", 0usize),
                ("spectral_norm", 1),
                ("relmse_os", 2),
                ("relmse_ai", 3),
            ] {
                let mut vals: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.value == value && r.gmm_id == gmm_id)
                    .map(|r| match pick {
                        0 => r.fp_mse,
                        1 => r.spectral_norm,
                        2 => r.relmse_os,
                        _ => r.relmse_ai,
                    })
                    .collect();
                if let Some((q25, med, q75)) = quantiles(&mut vals) {
                    let param = &self.rows[0].param;
                    out.push_str(&format!(
                        "{param},{value},{gmm_id},{metric},{q25:.17e},{med:.17e},{q75:.17e}\n"
                    ));
                }
            }
        }
        out
    }

    /// Median of a metric at a fixed swept value, across mixtures and
    /// repeats.
    pub fn median_at(&self, value: usize, metric: &str) -> Option<f64> {
        let mut vals: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.value == value)
            .map(|r| match metric {
                "fp_mse" => r.fp_mse,
                "spectral_norm" => r.spectral_norm,
                "relmse_os" => r.relmse_os,
                "relmse_ai" => r.relmse_ai,
                _ => f64::NAN,
            })
            .collect();
        quantiles(&mut vals).map(|(_, m, _)| m)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleComplexityConfig {
    pub n_grid: Vec<usize>,
    pub repeats: usize,
    /// Covariance scale factors, one regime per entry (large = overlapping
    /// components, small = well separated).
    pub separation_scales: Vec<f64>,
    pub em_iterations: usize,
    pub eps_r: f64,
    pub seed: u64,
}

impl Default for SampleComplexityConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![500, 1000, 2000, 5000],
            repeats: 10,
            separation_scales: vec![10.0, 0.5, 0.1],
            em_iterations: 200,
            eps_r: 1e-9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SampleComplexityRow {
    pub sigma: f64,
    pub n: usize,
    pub repeat: usize,
    pub one_sample_error: f64,
    pub two_sample_rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct SampleComplexityReport {
    pub rows: Vec<SampleComplexityRow>,
}

/// Scales every covariance of a base mixture by `sigma^2`.
fn scaled_mixture(base: &GmmParams, sigma: f64) -> GmmParams {
    let covs = base
        .covariances()
        .iter()
        .map(|c| SpdMatrix::new(c.entries() * (sigma * sigma)).expect("scaling keeps SPD"))
        .collect();
    GmmParams::new(base.weights().clone(), base.means().clone(), covs).expect("valid mixture")
}

/// The fixed mixture pair of the study: three unit-spaced components in 2D
/// whose covariances are scaled per separation regime.
pub fn sample_complexity_pair() -> (GmmParams, GmmParams) {
    let cov = SpdMatrix::new(ndarray::array![[0.05, 0.01], [0.01, 0.04]]).unwrap();
    let mu = GmmParams::new(
        Array1::from_vec(vec![0.35, 0.35, 0.3]),
        ndarray::array![[0.0, 0.0], [2.0, 0.3], [0.7, 2.0]],
        vec![cov.clone(); 3],
    )
    .unwrap();
    let nu = GmmParams::new(
        Array1::from_vec(vec![0.3, 0.3, 0.4]),
        ndarray::array![[0.5, -0.4], [2.5, 1.0], [-0.8, 1.6]],
        vec![cov; 3],
    )
    .unwrap();
    (mu, nu)
}

pub fn run_sample_complexity(
    mu: &GmmParams,
    nu: &GmmParams,
    cfg: &SampleComplexityConfig,
) -> Result<SampleComplexityReport> {
    if cfg.n_grid.is_empty() || cfg.repeats == 0 || cfg.separation_scales.is_empty() {
        return Err(FlowsError::Config("empty sample-complexity grid".into()));
    }
    let k = mu.n_components();
    let mut cells = Vec::new();
    for (si, &sigma) in cfg.separation_scales.iter().enumerate() {
        for &n in &cfg.n_grid {
            for rep in 0..cfg.repeats {
                cells.push((si, sigma, n, rep));
            }
        }
    }

    let rows: Vec<SampleComplexityRow> = cells
        .par_iter()
        .map(|&(si, sigma, n, rep)| {
            let mu_s = scaled_mixture(mu, sigma);
            let nu_s = scaled_mixture(nu, sigma);
            let (true_dist, _) = mw2_squared(&mu_s, &nu_s).expect("valid mixtures");
            let seed = cfg
                .seed
                .wrapping_add((si as u64) << 48)
                .wrapping_add((n as u64) << 16)
                .wrapping_add(rep as u64);
            let em = EmConfig {
                iterations: cfg.em_iterations,
                cov_regulariser: cfg.eps_r,
                ..EmConfig::default()
            };
            let fit = |g: &GmmParams, s: u64| -> std::result::Result<GmmParams, CoreError> {
                let x = sample_gmm(g, n, s);
                let theta0 = kmeanspp_init(&x, k, s ^ 0xF00D, 1e-6)?;
                let traj = em_trajectory(&theta0, &x, &em)?;
                Ok(traj.into_iter().last().unwrap())
            };
            let result = (|| -> std::result::Result<(f64, f64), CoreError> {
                let mu_hat = fit(&mu_s, seed)?;
                let nu_hat = fit(&nu_s, seed ^ 0xBEEF_CAFE)?;
                let (one, _) = mw2_squared(&mu_hat, &mu_s)?;
                let (cross, _) = mw2_squared(&mu_hat, &nu_hat)?;
                Ok((one, (cross - true_dist).abs() / true_dist))
            })();
            match result {
                Ok((one_sample_error, two_sample_rel_error)) => SampleComplexityRow {
                    sigma,
                    n,
                    repeat: rep,
                    one_sample_error,
                    two_sample_rel_error,
                },
                Err(_) => SampleComplexityRow {
                    sigma,
                    n,
                    repeat: rep,
                    one_sample_error: f64::NAN,
                    two_sample_rel_error: f64::NAN,
                },
            }
        })
        .collect();

    Ok(SampleComplexityReport { rows })
}

impl SampleComplexityReport {
    pub fn detail_csv(&self) -> String {
        let mut out =
            String::from("sigma,n,repeat,one_sample_error,two_sample_rel_error\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.17e},{:.17e}\n",
                r.sigma, r.n, r.repeat, r.one_sample_error, r.two_sample_rel_error
            ));
        }
        out
    }

    /// Median error per (sigma, n), with interquartile range.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("sigma,n,metric,q25,median,q75\n");
        let mut keys: Vec<(u64, usize)> = self
            .rows
            .iter()
            .map(|r| (r.sigma.to_bits(), r.n))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        keys.sort();
        for (sigma_bits, n) in keys {
            let sigma = f64::from_bits(sigma_bits);
            for metric in ["one_sample_error", "two_sample_rel_error"] {
                let mut vals: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.sigma.to_bits() == sigma_bits && r.n == n)
                    .map(|r| match metric {
                        "one_sample_error" => r.one_sample_error,
                        _ => r.two_sample_rel_error,
                    })
                    .collect();
                if let Some((q25, med, q75)) = quantiles(&mut vals) {
                    out.push_str(&format!(
                        "{sigma},{n},{metric},{q25:.17e},{med:.17e},{q75:.17e}\n"
                    ));
                }
            }
        }
        out
    }

    /// Spearman correlation of the median error against `n` for one
    /// separation regime.
    pub fn spearman_for(&self, sigma: f64, metric: &str) -> Option<f64> {
        let mut ns: Vec<usize> = self
            .rows
            .iter()
            .filter(|r| r.sigma == sigma)
            .map(|r| r.n)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        ns.sort();
        let medians: Vec<f64> = ns
            .iter()
            .filter_map(|&n| {
                let mut vals: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.sigma == sigma && r.n == n)
                    .map(|r| match metric {
                        "one_sample_error" => r.one_sample_error,
                        _ => r.two_sample_rel_error,
                    })
                    .collect();
                quantiles(&mut vals).map(|(_, m, _)| m)
            })
            .collect();
        if medians.len() != ns.len() || ns.len() < 2 {
            return None;
        }
        let xs: Vec<f64> = ns.iter().map(|&n| n as f64).collect();
        Some(spearman(&xs, &medians))
    }
}

/// Spearman rank correlation of two equally long samples.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let rank = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            // Average ranks over ties.
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &p in &idx[i..=j] {
                r[p] = avg;
            }
            i = j + 1;
        }
        r
    };
    let rx = rank(x);
    let ry = rank(y);
    let n = x.len() as f64;
    let mean = (n - 1.0) / 2.0;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for i in 0..x.len() {
        num += (rx[i] - mean) * (ry[i] - mean);
        dx += (rx[i] - mean) * (rx[i] - mean);
        dy += (ry[i] - mean) * (ry[i] - mean);
    }
    if dx == 0.0 || dy == 0.0 {
        return 0.0;
    }
    num / (dx * dy).sqrt()
}
