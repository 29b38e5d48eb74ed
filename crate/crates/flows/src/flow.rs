use crate::trace::{FlowConfig, FlowTrace};
use crate::{FlowsError, Result};
use diffem_core::diff::{pullback_ad, pullback_ai, pullback_os, FlatLayout, GradMethod};
use diffem_core::gmm::{
    em_trajectory, kmeanspp_init, m_step, sample_gmm, Dataset, EmConfig, GmmParams,
};
use diffem_core::ot::{mw2_grad_params, project_gmm};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// The paper-style regulariser default: `1e-4` times the largest covariance
/// eigenvalue of a mixture prefitted on the target data.
pub fn eps_r_heuristic(target: &GmmParams) -> f64 {
    1e-4 * target.max_cov_eigenvalue()
}

/// Packs transport-loss gradients with respect to means and covariances
/// into the flat parameter layout. The weight block is zero: the loss is
/// differentiated with the optimal plan held fixed, under which the value
/// has no weight sensitivity, matching the fixed-weights regime the flows
/// are designed for.
pub fn pack_loss_grad(
    k: usize,
    d: usize,
    d_means: &Array2<f64>,
    d_covs: &Array3<f64>,
) -> Array1<f64> {
    let layout = FlatLayout { k, d };
    let mut g = Array1::<f64>::zeros(layout.len());
    for c in 0..k {
        for a in 0..d {
            g[layout.m(c, a)] = d_means[[c, a]];
        }
        for a in 0..d {
            for b in 0..d {
                g[layout.sig(c, a, b)] = d_covs[[c, a, b]];
            }
        }
    }
    g
}

/// The flowed-against target: either a frozen mixture, or a point cloud
/// whose mixture is refit on a fresh subsample each step when the flow is
/// stochastic (`subsample_ratio < 1`).
#[derive(Debug, Clone)]
pub enum FlowTarget {
    Fixed(GmmParams),
    Refit { cloud: Dataset, theta0: GmmParams },
}

impl FlowTarget {
    fn resolve(
        &self,
        cfg: &FlowConfig,
        rng: &mut ChaCha8Rng,
        cache: &mut Option<GmmParams>,
    ) -> Result<GmmParams> {
        match self {
            FlowTarget::Fixed(gmm) => Ok(gmm.clone()),
            FlowTarget::Refit { cloud, theta0 } => {
                if cfg.subsample_ratio < 1.0 {
                    let m = subsample_size(cloud.n(), cfg.subsample_ratio);
                    let idx = draw_indices(cloud.n(), m, rng);
                    let sub = gather(cloud.points(), &idx);
                    let traj = em_trajectory(theta0, &Dataset::new_unchecked(sub), &cfg.em)
                        .map_err(FlowsError::Core)?;
                    Ok(traj.into_iter().last().unwrap())
                } else {
                    if cache.is_none() {
                        let traj =
                            em_trajectory(theta0, cloud, &cfg.em).map_err(FlowsError::Core)?;
                        *cache = Some(traj.into_iter().last().unwrap());
                    }
                    Ok(cache.clone().unwrap())
                }
            }
        }
    }
}

fn subsample_size(n: usize, r: f64) -> usize {
    ((r * n as f64).ceil() as usize).clamp(1, n)
}

fn draw_indices(n: usize, m: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    // Partial Fisher-Yates: uniform without replacement, deterministic
    // under the seeded stream.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(m);
    idx
}

fn gather(points: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let d = points.ncols();
    let mut out = Array2::<f64>::zeros((idx.len(), d));
    for (row, &i) in idx.iter().enumerate() {
        out.row_mut(row).assign(&points.row(i));
    }
    out
}

/// Loss evaluated at the fitted parameters against the per-step target:
/// energy value plus the packed flat-gradient.
type LossEval<'a> = dyn FnMut(&GmmParams, &GmmParams) -> Result<(f64, Array1<f64>)> + 'a;

const ENERGY_SLACK: f64 = 1e-12;
const MAX_HALVINGS: usize = 60;

fn drive_flow(
    x0: &Dataset,
    theta0: &GmmParams,
    target: &FlowTarget,
    cfg: &FlowConfig,
    loss: &mut LossEval<'_>,
) -> Result<FlowTrace> {
    cfg.validate()?;
    if cfg.grad_method != GradMethod::Warm && cfg.em.iterations == 0 {
        return Err(FlowsError::Config(
            "AD/AI/OS flows need at least one EM iteration".into(),
        ));
    }
    if cfg.halve_on_increase && cfg.subsample_ratio < 1.0 {
        return Err(FlowsError::Config(
            "halve_on_increase requires the deterministic flow (r = 1)".into(),
        ));
    }
    let start = Instant::now();
    let (n, d) = (x0.n(), x0.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = x0.points().clone();
    let mut theta_warm = theta0.clone();
    let mut target_cache: Option<GmmParams> = None;

    let mut energies = Vec::with_capacity(cfg.gd_steps + 1);
    let mut weight_snapshots = Vec::with_capacity(cfg.gd_steps + 1);
    let mut point_snapshots = Vec::new();
    point_snapshots.push(x.clone());

    let mut lr = cfg.learning_rate;
    let mut halvings = 0usize;
    // Pre-step cloud, applied full gradient, pre-step warm parameters and
    // pre-step energy; consumed by the halving retry.
    let mut prev: Option<(Array2<f64>, Array2<f64>, GmmParams, f64)> = None;

    let mut t = 0usize;
    loop {
        let (idx, x_fit) = if cfg.subsample_ratio < 1.0 {
            let m = subsample_size(n, cfg.subsample_ratio);
            let idx = draw_indices(n, m, &mut rng);
            let sub = gather(&x, &idx);
            (Some(idx), Dataset::new_unchecked(sub))
        } else {
            (None, Dataset::new_unchecked(x.clone()))
        };
        let target_gmm = target.resolve(cfg, &mut rng, &mut target_cache)?;

        let warm_before = theta_warm.clone();
        let evaluated = (|| -> Result<(GmmParams, Option<GmmParams>, f64, Array1<f64>)> {
            let (theta_fit, penult) = match cfg.grad_method {
                GradMethod::Warm => {
                    let next =
                        m_step(&theta_warm, &x_fit, &cfg.em).map_err(FlowsError::Core)?;
                    (next, None)
                }
                _ => {
                    let traj =
                        em_trajectory(theta0, &x_fit, &cfg.em).map_err(FlowsError::Core)?;
                    let penult = traj[traj.len() - 2].clone();
                    (traj.into_iter().last().unwrap(), Some(penult))
                }
            };
            let (energy, g) = loss(&theta_fit, &target_gmm)?;
            Ok((theta_fit, penult, energy, g))
        })();

        // Halving retry: undo the previous step at half the rate when the
        // energy went up, or when the oversized step broke the fit
        // entirely.
        if cfg.halve_on_increase && halvings < MAX_HALVINGS {
            if let Some((x_prev, grad_prev, warm_prev, e_prev)) = &prev {
                let retry = match &evaluated {
                    Ok((_, _, energy, _)) => *energy > e_prev + ENERGY_SLACK,
                    Err(e) => e.is_numerical(),
                };
                if retry {
                    lr *= 0.5;
                    halvings += 1;
                    x = x_prev.clone();
                    x.scaled_add(-lr, grad_prev);
                    theta_warm = warm_prev.clone();
                    continue;
                }
            }
        }
        let (theta_fit, theta_penultimate, energy, g) = evaluated?;

        energies.push(energy);
        weight_snapshots.push(theta_fit.weights().clone());
        if cfg.snapshot_every > 0 && t > 0 && t % cfg.snapshot_every == 0 {
            point_snapshots.push(x.clone());
        }
        if t == cfg.gd_steps {
            break;
        }

        let grad_fit = match cfg.grad_method {
            GradMethod::Warm => {
                let grad = diffem_core::diff::df_dx_vjp(&theta_warm, &x_fit, &cfg.em, &g);
                theta_warm = theta_fit.clone();
                grad
            }
            GradMethod::Ad => {
                pullback_ad(theta0, &x_fit, &cfg.em, &g)
                    .map_err(FlowsError::Core)?
                    .0
            }
            GradMethod::Ai => {
                pullback_ai(&theta_fit, &x_fit, &cfg.em, &g).map_err(FlowsError::Core)?
            }
            GradMethod::Os => {
                let penult = theta_penultimate.as_ref().expect("set for OS");
                pullback_os(penult, &x_fit, &cfg.em, &g).map_err(FlowsError::Core)?
            }
            GradMethod::Fd => unreachable!("rejected by validate"),
        };

        let mut grad_full = Array2::<f64>::zeros((n, d));
        match &idx {
            Some(idx) => {
                for (row, &i) in idx.iter().enumerate() {
                    for a in 0..d {
                        grad_full[[i, a]] = grad_fit[[row, a]];
                    }
                }
            }
            None => grad_full.assign(&grad_fit),
        }

        prev = Some((x.clone(), grad_full.clone(), warm_before, energy));
        x.scaled_add(-lr, &grad_full);
        t += 1;
    }

    point_snapshots.push(x);
    Ok(FlowTrace {
        energies,
        point_snapshots,
        weight_snapshots,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Gradient descent of `MW2^2(mixture(EM fit of X), target)` on the point
/// cloud with the configured Jacobian strategy. With `subsample_ratio < 1`
/// each step fits EM on a fresh uniform subsample, and a
/// [`FlowTarget::Refit`] target is refit per step on a subsample of its own
/// cloud.
pub fn run_flow(
    x0: &Dataset,
    theta0: &GmmParams,
    target: &FlowTarget,
    cfg: &FlowConfig,
) -> Result<FlowTrace> {
    let mut loss = |theta: &GmmParams, target_gmm: &GmmParams| {
        let grad = mw2_grad_params(theta, target_gmm).map_err(FlowsError::Core)?;
        let g = pack_loss_grad(
            theta.n_components(),
            theta.dim(),
            &grad.d_means,
            &grad.d_covs,
        );
        Ok((grad.value, g))
    };
    drive_flow(x0, theta0, target, cfg, &mut loss)
}

/// Descends the sum of `MW2^2` losses against several frozen targets with
/// uniform barycentre weights.
pub fn run_barycentre_flow(
    targets: &[GmmParams],
    x0: &Dataset,
    theta0: &GmmParams,
    cfg: &FlowConfig,
) -> Result<FlowTrace> {
    if targets.len() < 2 {
        return Err(FlowsError::Config("need at least two targets".into()));
    }
    let anchor = FlowTarget::Fixed(targets[0].clone());
    let mut loss = |theta: &GmmParams, _anchor: &GmmParams| {
        let (k, d) = (theta.n_components(), theta.dim());
        let mut total = 0.0;
        let mut g = Array1::<f64>::zeros(theta.flat_len());
        for target in targets {
            let grad = mw2_grad_params(theta, target).map_err(FlowsError::Core)?;
            total += grad.value;
            g += &pack_loss_grad(k, d, &grad.d_means, &grad.d_covs);
        }
        Ok((total, g))
    };
    drive_flow(x0, theta0, &anchor, cfg, &mut loss)
}

/// Generalised 3D barycentre: each 2D target is compared against a
/// coordinate-drop projection of the running 3D mixture. The regulariser is
/// pinned at `eps_r = 1e-3` for this experiment.
pub fn run_projected_barycentre(
    targets_2d: &[GmmParams],
    x0: &Dataset,
    theta0: &GmmParams,
    cfg: &FlowConfig,
) -> Result<FlowTrace> {
    if targets_2d.len() != 3 {
        return Err(FlowsError::Config(
            "expected exactly three 2D targets".into(),
        ));
    }
    if x0.dim() != 3 {
        return Err(FlowsError::Config("point cloud must be 3D".into()));
    }
    for t in targets_2d {
        if t.dim() != 2 {
            return Err(FlowsError::Config("targets must be 2D mixtures".into()));
        }
    }
    let mut cfg = cfg.clone();
    cfg.em.cov_regulariser = 1e-3;

    // Projection dropping coordinate i (orthogonal to the canonical
    // direction e_i), keeping the other two in order.
    let axes: Vec<Array2<f64>> = (0..3)
        .map(|drop| {
            let mut a = Array2::<f64>::zeros((2, 3));
            let keep: Vec<usize> = (0..3).filter(|&c| c != drop).collect();
            a[[0, keep[0]]] = 1.0;
            a[[1, keep[1]]] = 1.0;
            a
        })
        .collect();

    let anchor = FlowTarget::Fixed(targets_2d[0].clone());
    let mut loss = |theta: &GmmParams, _anchor: &GmmParams| {
        let (k, d) = (theta.n_components(), theta.dim());
        let mut total = 0.0;
        let mut d_means = Array2::<f64>::zeros((k, d));
        let mut d_covs = Array3::<f64>::zeros((k, d, d));
        for (a, target) in axes.iter().zip(targets_2d.iter()) {
            let projected = project_gmm(theta, a).map_err(FlowsError::Core)?;
            let grad = mw2_grad_params(&projected, target).map_err(FlowsError::Core)?;
            total += grad.value;
            // Chain through the projection: means by A^T, covariances by
            // A^T G A.
            for c in 0..k {
                for i3 in 0..d {
                    for i2 in 0..2 {
                        d_means[[c, i3]] += a[[i2, i3]] * grad.d_means[[c, i2]];
                    }
                }
                for i3 in 0..d {
                    for j3 in 0..d {
                        let mut acc = 0.0;
                        for i2 in 0..2 {
                            for j2 in 0..2 {
                                acc += a[[i2, i3]] * grad.d_covs[[c, i2, j2]] * a[[j2, j3]];
                            }
                        }
                        d_covs[[c, i3, j3]] += acc;
                    }
                }
            }
        }
        Ok((total, pack_loss_grad(k, d, &d_means, &d_covs)))
    };
    drive_flow(x0, theta0, &anchor, &cfg, &mut loss)
}

/// Outcome of a weight-pathology run (standard EM, weights free to move).
#[derive(Debug, Clone)]
pub struct PathologyReport {
    pub trace: FlowTrace,
    pub target_weights: Array1<f64>,
    pub final_weights: Array1<f64>,
    pub final_weight_gap: f64,
    pub final_energy: f64,
}

/// The three-component setup probing weight optimisation through standard
/// EM: well-separated clusters whose mass cannot migrate between
/// components. With `uniform`, source and target weights are both uniform;
/// otherwise the source starts at (1/5, 1/5, 3/5) against the target
/// (1/2, 3/10, 1/5).
pub fn run_weight_pathology(uniform: bool, cfg: &FlowConfig) -> Result<PathologyReport> {
    let (w0, w1): (Array1<f64>, Array1<f64>) = if uniform {
        (
            Array1::from_elem(3, 1.0 / 3.0),
            Array1::from_elem(3, 1.0 / 3.0),
        )
    } else {
        (
            Array1::from_vec(vec![0.2, 0.2, 0.6]),
            Array1::from_vec(vec![0.5, 0.3, 0.2]),
        )
    };
    let mut cfg = cfg.clone();
    cfg.em.fix_weights = false;

    let cov =
        diffem_core::linalg::SpdMatrix::scaled_identity(2, 0.25).map_err(FlowsError::Core)?;
    let source_means = ndarray::array![[2.5, 2.5], [-2.5, 2.5], [0.0, -3.0]];
    let target_means = ndarray::array![[4.0, 4.0], [-4.0, 4.0], [0.0, -5.0]];
    let mu0 = GmmParams::new(w0, source_means, vec![cov.clone(); 3]).map_err(FlowsError::Core)?;
    let nu = GmmParams::new(w1.clone(), target_means, vec![cov; 3]).map_err(FlowsError::Core)?;

    let n = 300;
    let x0 = sample_gmm(&mu0, n, cfg.seed.wrapping_add(101));
    let theta0 = mu0;

    let trace = run_flow(&x0, &theta0, &FlowTarget::Fixed(nu), &cfg)?;
    let final_weights = trace
        .weight_snapshots
        .last()
        .expect("at least one weight snapshot")
        .clone();
    let final_weight_gap = final_weights
        .iter()
        .zip(w1.iter())
        .map(|(a, b)| (a - b).abs())
        .sum();
    let final_energy = trace.final_energy();
    Ok(PathologyReport {
        trace,
        target_weights: w1,
        final_weights,
        final_weight_gap,
        final_energy,
    })
}

/// Convenience initialiser shared by the drivers: k-means++ means plus a
/// short EM prefit.
pub fn prefit(x: &Dataset, k: usize, cfg: &EmConfig, seed: u64) -> Result<GmmParams> {
    let init =
        kmeanspp_init(x, k, seed, cfg.cov_regulariser.max(1e-6)).map_err(FlowsError::Core)?;
    let traj = em_trajectory(&init, x, cfg).map_err(FlowsError::Core)?;
    Ok(traj.into_iter().last().unwrap())
}
