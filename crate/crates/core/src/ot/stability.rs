use super::{bures_distance, gaussian_w2, mw2_squared};
use crate::error::Result;
use crate::gmm::GmmParams;
use crate::linalg::{symmetrise, SpdMatrix};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Slack allowed before an empirical bound evaluation counts as violated.
pub const VIOLATION_SLACK: f64 = 1e-9;

/// A mixture pair together with perturbed estimates of both.
#[derive(Debug, Clone)]
pub struct StabilityInstance {
    pub mu: GmmParams,
    pub mu_hat: GmmParams,
    pub nu: GmmParams,
    pub nu_hat: GmmParams,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    pub fn violated(&self) -> bool {
        self.lhs > self.rhs + VIOLATION_SLACK
    }
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub one_sample: Vec<BoundCheck>,
    pub two_sample: Vec<BoundCheck>,
    pub violations: usize,
}

/// One-sample bound right-hand side: `rho_N + (rho_w / 2) * maxpair`.
pub fn one_sample_rhs(rho_n: f64, rho_w: f64, maxpair: f64) -> f64 {
    rho_n + 0.5 * rho_w * maxpair
}

/// Two-sample bound right-hand side:
/// `8 R_m rho_m + 8 R_S rho_S + 8 (R_m^2 + R_S^2) rho_w`.
pub fn two_sample_rhs(r_m: f64, r_s: f64, rho_m: f64, rho_s: f64, rho_w: f64) -> f64 {
    8.0 * r_m * rho_m + 8.0 * r_s * rho_s + 8.0 * (r_m * r_m + r_s * r_s) * rho_w
}

fn l1(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum()
}

fn one_sample_check(hat: &GmmParams, base: &GmmParams) -> Result<BoundCheck> {
    let (lhs, _) = mw2_squared(hat, base)?;
    let k = base.n_components();
    let mut rho_n = 0.0_f64;
    let mut maxpair = 0.0_f64;
    for a in 0..k {
        rho_n = rho_n.max(gaussian_w2(
            hat.means().row(a),
            &hat.covariances()[a],
            base.means().row(a),
            &base.covariances()[a],
        ));
        for b in 0..k {
            maxpair = maxpair.max(gaussian_w2(
                hat.means().row(a),
                &hat.covariances()[a],
                base.means().row(b),
                &base.covariances()[b],
            ));
        }
    }
    let rho_w = l1(hat.weights(), base.weights());
    Ok(BoundCheck {
        lhs,
        rhs: one_sample_rhs(rho_n, rho_w, maxpair),
    })
}

fn two_sample_check(inst: &StabilityInstance) -> Result<BoundCheck> {
    let (v_hat, _) = mw2_squared(&inst.mu_hat, &inst.nu_hat)?;
    let (v, _) = mw2_squared(&inst.mu, &inst.nu)?;
    let lhs = (v_hat - v).abs();

    let all = [&inst.mu, &inst.mu_hat, &inst.nu, &inst.nu_hat];
    let mut r_m = 0.0_f64;
    let mut r_s = 0.0_f64;
    for g in all {
        for kk in 0..g.n_components() {
            let norm: f64 = g.means().row(kk).iter().map(|x| x * x).sum::<f64>().sqrt();
            r_m = r_m.max(norm);
            r_s = r_s.max(g.covariances()[kk].trace().sqrt());
        }
    }
    let mut rho_m = 0.0_f64;
    let mut rho_s = 0.0_f64;
    for (base, hat) in [(&inst.mu, &inst.mu_hat), (&inst.nu, &inst.nu_hat)] {
        for kk in 0..base.n_components() {
            let dm: f64 = base
                .means()
                .row(kk)
                .iter()
                .zip(hat.means().row(kk).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            rho_m = rho_m.max(dm);
            rho_s = rho_s.max(bures_distance(
                &base.covariances()[kk],
                &hat.covariances()[kk],
            ));
        }
    }
    let rho_w = l1(inst.mu.weights(), inst.mu_hat.weights())
        .max(l1(inst.nu.weights(), inst.nu_hat.weights()));
    Ok(BoundCheck {
        lhs,
        rhs: two_sample_rhs(r_m, r_s, rho_m, rho_s, rho_w),
    })
}

/// Evaluates both stability bounds on every instance with their realised
/// perturbation magnitudes, flagging violations beyond [`VIOLATION_SLACK`].
pub fn check_stability_bounds(instances: &[StabilityInstance]) -> Result<StabilityReport> {
    let mut one_sample = Vec::with_capacity(instances.len() * 2);
    let mut two_sample = Vec::with_capacity(instances.len());
    for inst in instances {
        one_sample.push(one_sample_check(&inst.mu_hat, &inst.mu)?);
        one_sample.push(one_sample_check(&inst.nu_hat, &inst.nu)?);
        two_sample.push(two_sample_check(inst)?);
    }
    let violations = one_sample
        .iter()
        .chain(two_sample.iter())
        .filter(|c| c.violated())
        .count();
    Ok(StabilityReport {
        one_sample,
        two_sample,
        violations,
    })
}

fn random_gmm(d: usize, k: usize, rng: &mut ChaCha8Rng) -> GmmParams {
    let mut raw = vec![0.0_f64; k];
    for w in raw.iter_mut() {
        *w = 0.2 + rng.gen::<f64>();
    }
    let total: f64 = raw.iter().sum();
    let weights = Array1::from_iter(raw.iter().map(|w| w / total));
    let means = Array2::from_shape_fn((k, d), |_| 3.0 * rng.sample::<f64, _>(StandardNormal));
    let covs = (0..k)
        .map(|_| {
            let a = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
            let mut s = a.dot(&a.t()) / d as f64;
            for i in 0..d {
                s[[i, i]] += 0.3;
            }
            SpdMatrix::new(symmetrise(&s)).expect("constructed SPD")
        })
        .collect();
    GmmParams::new(weights, means, covs).expect("valid mixture")
}

fn perturb(g: &GmmParams, scale: f64, rng: &mut ChaCha8Rng) -> GmmParams {
    let (k, d) = (g.n_components(), g.dim());
    let mut raw: Vec<f64> = g.weights().to_vec();
    for w in raw.iter_mut() {
        *w = (*w + scale * 0.5 * rng.gen::<f64>()).max(1e-6);
    }
    let total: f64 = raw.iter().sum();
    let weights = Array1::from_iter(raw.iter().map(|w| w / total));
    let means = Array2::from_shape_fn((k, d), |(i, a)| {
        g.means()[[i, a]] + scale * rng.sample::<f64, _>(StandardNormal)
    });
    let covs = (0..k)
        .map(|c| {
            let bump = Array2::from_shape_fn((d, d), |_| rng.sample::<f64, _>(StandardNormal));
            let mut s = g.covariances()[c].entries().clone();
            let sym = symmetrise(&bump);
            for i in 0..d {
                for j in 0..d {
                    s[[i, j]] += scale * 0.5 * sym[[i, j]];
                }
            }
            for i in 0..d {
                s[[i, i]] += scale;
            }
            SpdMatrix::new(symmetrise(&s)).expect("perturbation keeps SPD")
        })
        .collect();
    GmmParams::new(weights, means, covs).expect("valid mixture")
}

/// Deterministic random instance used by the empirical verification runs.
pub fn random_perturbed_instance(
    d: usize,
    k: usize,
    scale: f64,
    seed: u64,
) -> StabilityInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mu = random_gmm(d, k, &mut rng);
    let nu = random_gmm(d, k, &mut rng);
    let mu_hat = perturb(&mu, scale, &mut rng);
    let nu_hat = perturb(&nu, scale, &mut rng);
    StabilityInstance {
        mu,
        mu_hat,
        nu,
        nu_hat,
    }
}
