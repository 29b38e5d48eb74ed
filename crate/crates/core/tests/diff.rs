use diffem_core::diff::{
    dF_dtheta, dF_dx, d_gamma, df_dx_vjp, jacobian_ad, jacobian_ai, jacobian_fd, jacobian_os,
    pullback_ad, warm_start_step, FlatLayout, FlatParamVector,
};
use diffem_core::gmm::{m_step, Dataset, EmConfig, GmmParams};
use diffem_core::linalg::{symmetrise, SpdMatrix};
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Naive reference implementation of the responsibility map and the M-step,
/// on unconstrained raw parameters, with its own Gaussian elimination.
/// Everything the analytic blocks are checked against lives here.
mod oracle {
    use ndarray::{Array1, Array2};

    #[derive(Clone)]
    pub struct Raw {
        pub w: Vec<f64>,
        pub means: Array2<f64>,  // K x d
        pub covs: Vec<Array2<f64>>, // K of d x d
    }

    /// Determinant and inverse by Gauss-Jordan with partial pivoting.
    fn det_inv(m: &Array2<f64>) -> (f64, Array2<f64>) {
        let d = m.nrows();
        let mut a = m.clone();
        let mut inv = Array2::<f64>::eye(d);
        let mut det = 1.0;
        for col in 0..d {
            let mut piv = col;
            for r in (col + 1)..d {
                if a[[r, col]].abs() > a[[piv, col]].abs() {
                    piv = r;
                }
            }
            if piv != col {
                det = -det;
                for c in 0..d {
                    a.swap([col, c], [piv, c]);
                    inv.swap([col, c], [piv, c]);
                }
            }
            let p = a[[col, col]];
            det *= p;
            for c in 0..d {
                a[[col, c]] /= p;
                inv[[col, c]] /= p;
            }
            for r in 0..d {
                if r != col {
                    let f = a[[r, col]];
                    for c in 0..d {
                        let ac = a[[col, c]];
                        let ic = inv[[col, c]];
                        a[[r, c]] -= f * ac;
                        inv[[r, c]] -= f * ic;
                    }
                }
            }
        }
        (det, inv)
    }

    fn density(mean: &[f64], cov: &Array2<f64>, x: &[f64]) -> f64 {
        let d = mean.len();
        let (det, inv) = det_inv(cov);
        let mut quad = 0.0;
        for a in 0..d {
            for b in 0..d {
                quad += (x[a] - mean[a]) * inv[[a, b]] * (x[b] - mean[b]);
            }
        }
        (-0.5 * quad).exp() / ((2.0 * std::f64::consts::PI).powf(d as f64 / 2.0) * det.sqrt())
    }

    pub fn gamma(raw: &Raw, x: &Array2<f64>) -> Array2<f64> {
        let (n, d) = (x.nrows(), x.ncols());
        let k = raw.w.len();
        let mut g = Array2::<f64>::zeros((n, k));
        for i in 0..n {
            let xi: Vec<f64> = (0..d).map(|a| x[[i, a]]).collect();
            let mut z = 0.0;
            let mut row = vec![0.0; k];
            for c in 0..k {
                let mean: Vec<f64> = (0..d).map(|a| raw.means[[c, a]]).collect();
                row[c] = raw.w[c] * density(&mean, &raw.covs[c], &xi);
                z += row[c];
            }
            for c in 0..k {
                g[[i, c]] = row[c] / z;
            }
        }
        g
    }

    /// One M-step from the raw parameters: returns (weights, means, covs).
    /// With `frozen`, the frozen blocks are captured constants taken from
    /// `frozen` rather than pass-throughs of the (possibly perturbed)
    /// input, matching the fixed-weights / frozen-covariance conventions.
    pub fn m_step(
        raw: &Raw,
        x: &Array2<f64>,
        frozen: Option<&Raw>,
        fix_weights: bool,
        update_covs: bool,
        eps_r: f64,
    ) -> Raw {
        let (n, d) = (x.nrows(), x.ncols());
        let k = raw.w.len();
        let g = gamma(raw, x);
        let mut sums = vec![0.0; k];
        for i in 0..n {
            for c in 0..k {
                sums[c] += g[[i, c]];
            }
        }
        let w = if fix_weights {
            frozen.unwrap_or(raw).w.clone()
        } else {
            sums.iter().map(|s| s / n as f64).collect()
        };
        let mut means = Array2::<f64>::zeros((k, d));
        for c in 0..k {
            for i in 0..n {
                for a in 0..d {
                    means[[c, a]] += g[[i, c]] * x[[i, a]] / sums[c];
                }
            }
        }
        let covs: Vec<Array2<f64>> = if update_covs {
            (0..k)
                .map(|c| {
                    let mut s = Array2::<f64>::zeros((d, d));
                    for i in 0..n {
                        for a in 0..d {
                            for b in 0..d {
                                s[[a, b]] += g[[i, c]]
                                    * (x[[i, a]] - means[[c, a]])
                                    * (x[[i, b]] - means[[c, b]])
                                    / sums[c];
                            }
                        }
                    }
                    for a in 0..d {
                        s[[a, a]] += eps_r;
                    }
                    s
                })
                .collect()
        } else {
            frozen.unwrap_or(raw).covs.clone()
        };
        Raw { w, means, covs }
    }

    /// Flattens raw parameters with the crate's layout.
    pub fn flatten(raw: &Raw) -> Array1<f64> {
        let k = raw.w.len();
        let d = raw.means.ncols();
        let p = k + k * d + k * d * d;
        let mut out = Array1::<f64>::zeros(p);
        for c in 0..k {
            out[c] = raw.w[c];
            for a in 0..d {
                out[k + c * d + a] = raw.means[[c, a]];
            }
            for a in 0..d {
                for b in 0..d {
                    out[k + k * d + c * d * d + a * d + b] = raw.covs[c][[a, b]];
                }
            }
        }
        out
    }
}

fn to_raw(theta: &GmmParams) -> oracle::Raw {
    oracle::Raw {
        w: theta.weights().to_vec(),
        means: theta.means().clone(),
        covs: theta
            .covariances()
            .iter()
            .map(|c| c.entries().clone())
            .collect(),
    }
}

fn random_instance(seed: u64, n: usize, d: usize, k: usize) -> (GmmParams, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<f64> = (0..k).map(|_| 0.4 + rng.gen::<f64>()).collect();
    let total: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= total;
    }
    let means = Array2::from_shape_fn((k, d), |_| 3.0 * (rng.gen::<f64>() - 0.5));
    let covs: Vec<SpdMatrix> = (0..k)
        .map(|_| {
            let a = Array2::from_shape_fn((d, d), |_| rng.gen::<f64>() - 0.5);
            let mut s = a.dot(&a.t());
            for i in 0..d {
                s[[i, i]] += 0.6;
            }
            SpdMatrix::new(symmetrise(&s)).unwrap()
        })
        .collect();
    let theta = GmmParams::new(Array1::from_vec(w), means, covs).unwrap();
    let pts = Array2::from_shape_fn((n, d), |_| 5.0 * (rng.gen::<f64>() - 0.5));
    (theta, Dataset::new(pts).unwrap())
}

const FD_EPS: f64 = 1e-6;

/// Central difference of a vector-valued function of one scalar knob.
fn central<F: Fn(f64) -> Array1<f64>>(f: F) -> Array1<f64> {
    let plus = f(FD_EPS);
    let minus = f(-FD_EPS);
    (&plus - &minus) / (2.0 * FD_EPS)
}

fn rel_err(got: &Array1<f64>, want: &Array1<f64>, scale: f64) -> f64 {
    let num: f64 = got
        .iter()
        .zip(want.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    num / scale.max(1e-9)
}

#[test]
fn d_gamma_single_component_vanishes() {
    let (theta, x) = random_instance(1, 6, 2, 1);
    let blocks = d_gamma(&theta, &x);
    assert!(blocks.d_w.iter().all(|v| v.abs() < 1e-15));
    assert!(blocks.d_means.iter().all(|v| v.abs() < 1e-15));
    assert!(blocks.d_covs.iter().all(|v| v.abs() < 1e-15));
    assert!(blocks.d_x.iter().all(|v| v.abs() < 1e-15));
}

#[test]
fn d_gamma_matches_finite_differences() {
    let (theta, x) = random_instance(2, 4, 2, 2);
    let raw = to_raw(&theta);
    let blocks = d_gamma(&theta, &x);
    let (n, d, k) = (4usize, 2usize, 2usize);
    let flat_gamma = |g: &Array2<f64>| Array1::from_iter(g.iter().copied());
    let scale = flat_gamma(&oracle::gamma(&raw, x.points()))
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(1.0);

    // Weight directions.
    for l in 0..k {
        let fd = central(|e| {
            let mut r = raw.clone();
            r.w[l] += e;
            flat_gamma(&oracle::gamma(&r, x.points()))
        });
        let mut analytic = Array1::<f64>::zeros(n * k);
        for i in 0..n {
            for kk in 0..k {
                analytic[i * k + kk] = blocks.d_w[[i, kk, l]];
            }
        }
        assert!(rel_err(&analytic, &fd, scale) <= 1e-6, "w dir {l}");
    }
    // Mean directions.
    for l in 0..k {
        for c in 0..d {
            let fd = central(|e| {
                let mut r = raw.clone();
                r.means[[l, c]] += e;
                flat_gamma(&oracle::gamma(&r, x.points()))
            });
            let mut analytic = Array1::<f64>::zeros(n * k);
            for i in 0..n {
                for kk in 0..k {
                    analytic[i * k + kk] = blocks.d_means[[i, kk, l, c]];
                }
            }
            assert!(rel_err(&analytic, &fd, scale) <= 1e-6, "m dir ({l},{c})");
        }
    }
    // Symmetric covariance directions.
    for l in 0..k {
        for c in 0..d {
            for e2 in c..d {
                let fd = central(|e| {
                    let mut r = raw.clone();
                    r.covs[l][[c, e2]] += e;
                    if c != e2 {
                        r.covs[l][[e2, c]] += e;
                    }
                    flat_gamma(&oracle::gamma(&r, x.points()))
                });
                let mut analytic = Array1::<f64>::zeros(n * k);
                for i in 0..n {
                    for kk in 0..k {
                        let v = if c == e2 {
                            blocks.d_covs[[i, kk, l, c, e2]]
                        } else {
                            blocks.d_covs[[i, kk, l, c, e2]] + blocks.d_covs[[i, kk, l, e2, c]]
                        };
                        analytic[i * k + kk] = v;
                    }
                }
                assert!(
                    rel_err(&analytic, &fd, scale) <= 1e-6,
                    "sigma dir ({l},{c},{e2})"
                );
            }
        }
    }
    // Data directions.
    for j in 0..n {
        for c in 0..d {
            let fd = central(|e| {
                let mut pts = x.points().clone();
                pts[[j, c]] += e;
                flat_gamma(&oracle::gamma(&raw, &pts))
            });
            let mut analytic = Array1::<f64>::zeros(n * k);
            for i in 0..n {
                for kk in 0..k {
                    analytic[i * k + kk] = blocks.d_x[[i, kk, j, c]];
                }
            }
            assert!(rel_err(&analytic, &fd, scale) <= 1e-6, "x dir ({j},{c})");
        }
    }
}

#[test]
fn d_gamma_rows_sum_to_zero() {
    let (theta, x) = random_instance(3, 5, 2, 3);
    let blocks = d_gamma(&theta, &x);
    let (n, k, d) = (5usize, 3usize, 2usize);
    for i in 0..n {
        for l in 0..k {
            let s: f64 = (0..k).map(|kk| blocks.d_w[[i, kk, l]]).sum();
            assert!(s.abs() <= 1e-12);
            for c in 0..d {
                let s: f64 = (0..k).map(|kk| blocks.d_means[[i, kk, l, c]]).sum();
                assert!(s.abs() <= 1e-12);
            }
        }
        for c in 0..d {
            let s: f64 = (0..k).map(|kk| blocks.d_x[[i, kk, i, c]]).sum();
            assert!(s.abs() <= 1e-12);
        }
    }
}

#[test]
fn d_gamma_symmetric_instance_antisymmetry() {
    let theta = GmmParams::new(
        array![0.5, 0.5],
        array![[-1.0], [1.0]],
        vec![
            SpdMatrix::new(array![[1.0]]).unwrap(),
            SpdMatrix::new(array![[1.0]]).unwrap(),
        ],
    )
    .unwrap();
    let x = Dataset::new_unchecked(array![[0.0], [0.5], [-0.5]]);
    let blocks = d_gamma(&theta, &x);
    // At the midpoint sample the weight block is antisymmetric across
    // components.
    for l in 0..2 {
        let a = blocks.d_w[[0, 0, l]];
        let b = blocks.d_w[[0, 1, l]];
        assert!((a + b).abs() <= 1e-14, "l={l}: {a} vs {b}");
        assert!(a.abs() > 1e-3);
    }
}

/// Finite-difference check of the assembled dF/dtheta against the naive
/// M-step, column family by column family.
fn check_df_dtheta(seed: u64, n: usize, d: usize, k: usize, cfg: &EmConfig, tol: f64) {
    let (theta, x) = random_instance(seed, n, d, k);
    let raw = to_raw(&theta);
    let a = dF_dtheta(&theta, &x, cfg);
    let layout = FlatLayout { k, d };
    let p = layout.len();
    let fix_w = cfg.fix_weights;
    let upd_c = cfg.update_covariances;
    let base = raw.clone();
    let run = |r: &oracle::Raw, pts: &Array2<f64>| {
        oracle::flatten(&oracle::m_step(
            r,
            pts,
            Some(&base),
            fix_w,
            upd_c,
            cfg.cov_regulariser,
        ))
    };
    let scale = run(&raw, x.points())
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
        .max(1.0);

    let column = |idx: usize| -> Array1<f64> {
        Array1::from_iter((0..p).map(|r| a[[r, idx]]))
    };

    for l in 0..k {
        let fd = central(|e| {
            let mut r = raw.clone();
            r.w[l] += e;
            run(&r, x.points())
        });
        assert!(
            rel_err(&column(layout.w(l)), &fd, scale) <= tol,
            "seed {seed} w column {l}"
        );
        for c in 0..d {
            let fd = central(|e| {
                let mut r = raw.clone();
                r.means[[l, c]] += e;
                run(&r, x.points())
            });
            assert!(
                rel_err(&column(layout.m(l, c)), &fd, scale) <= tol,
                "seed {seed} m column ({l},{c})"
            );
        }
        for c in 0..d {
            for e2 in c..d {
                let fd = central(|e| {
                    let mut r = raw.clone();
                    r.covs[l][[c, e2]] += e;
                    if c != e2 {
                        r.covs[l][[e2, c]] += e;
                    }
                    run(&r, x.points())
                });
                let combo = if c == e2 {
                    column(layout.sig(l, c, e2))
                } else {
                    column(layout.sig(l, c, e2)) + column(layout.sig(l, e2, c))
                };
                assert!(
                    rel_err(&combo, &fd, scale) <= tol,
                    "seed {seed} sigma column ({l},{c},{e2})"
                );
            }
        }
    }
}

fn check_df_dx(seed: u64, n: usize, d: usize, k: usize, cfg: &EmConfig, tol: f64) {
    let (theta, x) = random_instance(seed, n, d, k);
    let raw = to_raw(&theta);
    let b = dF_dx(&theta, &x, cfg);
    let layout = FlatLayout { k, d };
    let p = layout.len();
    let fix_w = cfg.fix_weights;
    let upd_c = cfg.update_covariances;
    let run = |pts: &Array2<f64>| {
        oracle::flatten(&oracle::m_step(
            &raw,
            pts,
            None,
            fix_w,
            upd_c,
            cfg.cov_regulariser,
        ))
    };
    let scale = run(x.points()).iter().map(|v| v * v).sum::<f64>().sqrt().max(1.0);

    for j in 0..n {
        for c in 0..d {
            let fd = central(|e| {
                let mut pts = x.points().clone();
                pts[[j, c]] += e;
                run(&pts)
            });
            let col = Array1::from_iter((0..p).map(|r| b[[r, j * d + c]]));
            assert!(
                rel_err(&col, &fd, scale) <= tol,
                "seed {seed} x column ({j},{c})"
            );
        }
    }
}

#[test]
fn df_dtheta_matches_finite_differences() {
    let cfg = EmConfig::default();
    check_df_dtheta(10, 5, 2, 2, &cfg, 1e-6);
    check_df_dtheta(11, 6, 3, 2, &cfg, 1e-6);
    check_df_dtheta(12, 6, 2, 3, &cfg, 1e-6);
}

#[test]
fn df_dtheta_fix_weights_variant() {
    let cfg = EmConfig {
        fix_weights: true,
        ..EmConfig::default()
    };
    check_df_dtheta(13, 5, 2, 2, &cfg, 1e-6);
    // Weight rows are exactly zero.
    let (theta, x) = random_instance(13, 5, 2, 2);
    let a = dF_dtheta(&theta, &x, &cfg);
    for l in 0..a.ncols() {
        assert_eq!(a[[0, l]], 0.0);
        assert_eq!(a[[1, l]], 0.0);
    }
}

#[test]
fn df_dtheta_frozen_covariances_variant() {
    let cfg = EmConfig {
        update_covariances: false,
        ..EmConfig::default()
    };
    check_df_dtheta(14, 5, 2, 2, &cfg, 1e-6);
}

#[test]
fn df_dx_matches_finite_differences() {
    let cfg = EmConfig::default();
    check_df_dx(20, 5, 2, 2, &cfg, 1e-6);
    check_df_dx(21, 4, 3, 2, &cfg, 1e-6);
    check_df_dx(22, 6, 2, 3, &cfg, 1e-6);
}

#[test]
fn df_dtheta_single_component_hand_blocks() {
    let (theta, x) = random_instance(30, 8, 2, 1);
    let cfg = EmConfig::default();
    let a = dF_dtheta(&theta, &x, &cfg);
    // gamma == 1: the mean update is the data mean, independent of theta,
    // and every outer-product correction vanishes with it.
    for r in 0..a.nrows() {
        for c in 0..a.ncols() {
            assert!(
                a[[r, c]].abs() <= 1e-12,
                "K=1 theta-Jacobian should vanish, got {} at ({r},{c})",
                a[[r, c]]
            );
        }
    }
}

#[test]
fn df_dx_single_component_identity_blocks() {
    let (theta, x) = random_instance(31, 7, 2, 1);
    let cfg = EmConfig::default();
    let b = dF_dx(&theta, &x, &cfg);
    let layout = FlatLayout { k: 1, d: 2 };
    let n = x.n() as f64;
    for i in 0..x.n() {
        for c in 0..2 {
            // Weight rows vanish, mean rows carry I/n.
            assert!(b[[layout.w(0), i * 2 + c]].abs() <= 1e-15);
            for a in 0..2 {
                let want = if a == c { 1.0 / n } else { 0.0 };
                assert!((b[[layout.m(0, a), i * 2 + c]] - want).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn jacobian_ad_t1_equals_df_dx() {
    let (theta, x) = random_instance(40, 6, 2, 2);
    let cfg = EmConfig {
        iterations: 1,
        ..EmConfig::default()
    };
    let ad = jacobian_ad(&theta, &x, &cfg).unwrap();
    let b = dF_dx(&theta, &x, &cfg);
    assert_eq!(ad.jacobian, b);
}

#[test]
fn jacobian_ad_single_component_any_t() {
    let (theta, x) = random_instance(41, 9, 2, 1);
    for t in [1usize, 3, 7] {
        let cfg = EmConfig {
            iterations: t,
            ..EmConfig::default()
        };
        let ad = jacobian_ad(&theta, &x, &cfg).unwrap();
        let layout = FlatLayout { k: 1, d: 2 };
        let n = x.n() as f64;
        for i in 0..x.n() {
            for c in 0..2 {
                for a in 0..2 {
                    let want = if a == c { 1.0 / n } else { 0.0 };
                    assert!(
                        (ad.jacobian[[layout.m(0, a), i * 2 + c]] - want).abs() <= 1e-10,
                        "T={t}"
                    );
                }
            }
        }
    }
}

#[test]
fn jacobian_ad_matches_fd_oracle() {
    let (theta, x) = random_instance(42, 20, 2, 2);
    let cfg = EmConfig {
        iterations: 10,
        cov_regulariser: 1e-9,
        ..EmConfig::default()
    };
    let ad = jacobian_ad(&theta, &x, &cfg).unwrap();
    let fd = jacobian_fd(&theta, &x, &cfg, 1e-6).unwrap();
    let rel = ad.rel_mse(&fd);
    assert!(rel <= 1e-6, "relative MSE {rel}");
}

#[test]
fn jacobian_ai_single_component_exact() {
    let (theta0, x) = random_instance(43, 8, 2, 1);
    let cfg = EmConfig {
        iterations: 1,
        ..EmConfig::default()
    };
    // One K=1 EM step lands exactly on the fixed point.
    let theta_star = m_step(&theta0, &x, &cfg).unwrap();
    let ad = jacobian_ad(&theta_star, &x, &cfg).unwrap();
    let ai = jacobian_ai(&theta_star, &x, &cfg).unwrap();
    let rel = ai.rel_mse(&ad);
    assert!(rel <= 1e-12, "relative MSE {rel}");
    assert!(ai.fixed_point_residual <= 1e-24);
}

#[test]
fn jacobian_ai_close_to_ad_on_separated_instance() {
    // Well-separated two-cluster data; EM converges fast and AI at the
    // fixed point reproduces the unrolled gradient.
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let n_half = 15;
    let mut pts = Array2::<f64>::zeros((2 * n_half, 2));
    for i in 0..n_half {
        pts[[i, 0]] = 0.3 * rng.gen::<f64>();
        pts[[i, 1]] = 0.3 * rng.gen::<f64>();
        pts[[n_half + i, 0]] = 10.0 + 0.3 * rng.gen::<f64>();
        pts[[n_half + i, 1]] = 0.3 * rng.gen::<f64>();
    }
    let x = Dataset::new(pts).unwrap();
    let theta0 = GmmParams::new(
        array![0.5, 0.5],
        array![[1.0, 0.0], [9.0, 0.5]],
        vec![
            SpdMatrix::new(Array2::<f64>::eye(2)).unwrap(),
            SpdMatrix::new(Array2::<f64>::eye(2)).unwrap(),
        ],
    )
    .unwrap();
    let cfg = EmConfig {
        iterations: 40,
        ..EmConfig::default()
    };
    let traj = diffem_core::gmm::em_trajectory(&theta0, &x, &cfg).unwrap();
    let ad = jacobian_ad(&theta0, &x, &cfg).unwrap();
    let ai = jacobian_ai(traj.last().unwrap(), &x, &cfg).unwrap();
    let rel = ai.rel_mse(&ad);
    assert!(rel <= 1e-4, "relative MSE {rel}");
}

#[test]
fn jacobian_ai_identity_solve_edge() {
    // One-hot responsibilities, frozen weights and covariances: dF/dtheta
    // is numerically zero and AI reduces to dF/dX.
    let (_, x) = {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let mut pts = Array2::<f64>::zeros((12, 1));
        for i in 0..6 {
            pts[[i, 0]] = 0.1 * rng.gen::<f64>();
            pts[[6 + i, 0]] = 50.0 + 0.1 * rng.gen::<f64>();
        }
        (0, Dataset::new_unchecked(pts))
    };
    let theta = GmmParams::new(
        array![0.5, 0.5],
        array![[0.0], [50.0]],
        vec![
            SpdMatrix::new(array![[0.01]]).unwrap(),
            SpdMatrix::new(array![[0.01]]).unwrap(),
        ],
    )
    .unwrap();
    let cfg = EmConfig {
        fix_weights: true,
        update_covariances: false,
        ..EmConfig::default()
    };
    let ai = jacobian_ai(&theta, &x, &cfg).unwrap();
    let b = dF_dx(&theta, &x, &cfg);
    let diff: f64 = ai
        .jacobian
        .iter()
        .zip(b.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff <= 1e-12, "max deviation {diff}");
}

#[test]
fn jacobian_os_t1_equals_ad() {
    let (theta, x) = random_instance(46, 6, 2, 2);
    let cfg = EmConfig {
        iterations: 1,
        ..EmConfig::default()
    };
    let ad = jacobian_ad(&theta, &x, &cfg).unwrap();
    let os = jacobian_os(&theta, &x, &cfg).unwrap();
    assert_eq!(ad.jacobian, os.jacobian);
}

#[test]
fn jacobian_os_single_component_equals_ad() {
    let (theta, x) = random_instance(47, 8, 2, 1);
    for t in [2usize, 5] {
        let cfg = EmConfig {
            iterations: t,
            ..EmConfig::default()
        };
        let traj = diffem_core::gmm::em_trajectory(&theta, &x, &cfg).unwrap();
        let ad = jacobian_ad(&theta, &x, &cfg).unwrap();
        let os = jacobian_os(&traj[t - 1], &x, &cfg).unwrap();
        let rel = os.rel_mse(&ad);
        assert!(rel <= 1e-20, "T={t}: rel {rel}");
    }
}

#[test]
fn jacobian_os_worse_than_ai_generically() {
    // Data drawn from a genuine three-component mixture with a k-means++
    // start, so EM actually settles near a fixed point.
    let generator = GmmParams::new(
        array![0.3, 0.4, 0.3],
        array![[0.0, 0.0], [4.0, 1.0], [-1.0, 4.0]],
        vec![
            SpdMatrix::new(array![[0.4, 0.1], [0.1, 0.3]]).unwrap(),
            SpdMatrix::new(array![[0.3, -0.05], [-0.05, 0.5]]).unwrap(),
            SpdMatrix::new(array![[0.5, 0.0], [0.0, 0.2]]).unwrap(),
        ],
    )
    .unwrap();
    let trials = 20;
    let mut rel_os_all = Vec::new();
    let mut rel_ai_all = Vec::new();
    for seed in 0..trials {
        let x = diffem_core::gmm::sample_gmm(&generator, 60, 900 + seed);
        let theta0 = diffem_core::gmm::kmeanspp_init(&x, 3, seed, 1e-6).unwrap();
        let cfg = EmConfig {
            iterations: 40,
            cov_regulariser: 1e-9,
            ..EmConfig::default()
        };
        let traj = match diffem_core::gmm::em_trajectory(&theta0, &x, &cfg) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let ad = jacobian_ad(&theta0, &x, &cfg).unwrap();
        let ai = match jacobian_ai(traj.last().unwrap(), &x, &cfg) {
            Ok(r) => r,
            Err(_) => continue,
        };
        let os = jacobian_os(&traj[cfg.iterations - 1], &x, &cfg).unwrap();
        rel_os_all.push(os.rel_mse(&ad));
        rel_ai_all.push(ai.rel_mse(&ad));
    }
    rel_os_all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rel_ai_all.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med_os = rel_os_all[rel_os_all.len() / 2];
    let med_ai = rel_ai_all[rel_ai_all.len() / 2];
    assert!(
        med_ai < med_os,
        "median relMSE: AI {med_ai} vs OS {med_os} over {} trials",
        rel_os_all.len()
    );
}

#[test]
fn jacobian_fd_single_component_mean_blocks() {
    let (theta, x) = random_instance(48, 10, 2, 1);
    let cfg = EmConfig {
        iterations: 3,
        ..EmConfig::default()
    };
    let fd = jacobian_fd(&theta, &x, &cfg, 1e-6).unwrap();
    let layout = FlatLayout { k: 1, d: 2 };
    let n = x.n() as f64;
    for i in 0..x.n() {
        for c in 0..2 {
            for a in 0..2 {
                let want = if a == c { 1.0 / n } else { 0.0 };
                assert!((fd.jacobian[[layout.m(0, a), i * 2 + c]] - want).abs() <= 1e-8);
            }
        }
    }
}

#[test]
fn jacobian_fd_step_sensitivity() {
    let (theta, x) = random_instance(49, 12, 2, 2);
    let cfg = EmConfig {
        iterations: 8,
        cov_regulariser: 1e-9,
        ..EmConfig::default()
    };
    let ad = jacobian_ad(&theta, &x, &cfg).unwrap();
    for eps in [1e-5, 1e-6, 1e-7] {
        let fd = jacobian_fd(&theta, &x, &cfg, eps).unwrap();
        let rel = fd.rel_mse(&ad);
        println!("fd step {eps:>8.1e}: relative MSE vs AD {rel:.3e}");
        assert!(rel.is_finite());
        assert!(rel <= 1e-3, "eps {eps}: rel {rel}");
    }
}

#[test]
fn warm_start_lr_zero_is_pure_em() {
    let (theta, x) = random_instance(50, 10, 2, 2);
    let cfg = EmConfig::default();
    let g = Array1::from_elem(theta.flat_len(), 0.7);
    let (theta_next, x_next) = warm_start_step(&theta, &x, &g, 0.0, &cfg).unwrap();
    assert_eq!(x_next.points(), x.points());
    let direct = m_step(&theta, &x, &cfg).unwrap();
    assert_eq!(theta_next.means(), direct.means());

    // Zero loss gradient moves nothing either.
    let zero = Array1::zeros(theta.flat_len());
    let (_, x_same) = warm_start_step(&theta, &x, &zero, 0.5, &cfg).unwrap();
    assert_eq!(x_same.points(), x.points());
}

#[test]
fn weight_rows_conserve_mass() {
    let (theta, x) = random_instance(51, 10, 2, 3);
    let cfg = EmConfig {
        iterations: 6,
        cov_regulariser: 1e-9,
        ..EmConfig::default()
    };
    let traj = diffem_core::gmm::em_trajectory(&theta, &x, &cfg).unwrap();
    let reports = [
        jacobian_ad(&theta, &x, &cfg).unwrap(),
        jacobian_ai(traj.last().unwrap(), &x, &cfg).unwrap(),
        jacobian_os(&traj[cfg.iterations - 1], &x, &cfg).unwrap(),
        jacobian_fd(&theta, &x, &cfg, 1e-6).unwrap(),
    ];
    for rep in &reports {
        for col in 0..rep.jacobian.ncols() {
            let s: f64 = (0..3).map(|k| rep.jacobian[[k, col]]).sum();
            assert!(
                s.abs() <= 1e-10,
                "{:?}: weight column sum {s}",
                rep.method
            );
        }
    }
}

#[test]
fn vjp_agrees_with_dense_product() {
    let (theta, x) = random_instance(52, 9, 2, 2);
    let cfg = EmConfig::default();
    let p = theta.flat_len();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let u = Array1::from_shape_fn(p, |_| rng.gen::<f64>() - 0.5);
    let dense = dF_dx(&theta, &x, &cfg);
    let want = u.dot(&dense);
    let got = df_dx_vjp(&theta, &x, &cfg, &u);
    for i in 0..x.n() {
        for c in 0..2 {
            assert!((got[[i, c]] - want[i * 2 + c]).abs() <= 1e-12);
        }
    }
}

#[test]
fn pullback_matches_dense_ad() {
    let (theta, x) = random_instance(53, 8, 2, 2);
    let cfg = EmConfig {
        iterations: 5,
        cov_regulariser: 1e-9,
        ..EmConfig::default()
    };
    let p = theta.flat_len();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Array1::from_shape_fn(p, |_| rng.gen::<f64>() - 0.5);
    let ad = jacobian_ad(&theta, &x, &cfg).unwrap();
    let want = g.dot(&ad.jacobian);
    let (got, _) = pullback_ad(&theta, &x, &cfg, &g).unwrap();
    for i in 0..x.n() {
        for c in 0..2 {
            assert!((got[[i, c]] - want[i * 2 + c]).abs() <= 1e-11);
        }
    }
}

#[test]
fn flat_roundtrip_is_lossless() {
    let (theta, _) = random_instance(54, 6, 3, 2);
    let flat = FlatParamVector::from_params(&theta);
    assert_eq!(flat.data.len(), theta.flat_len());
    let back = flat.to_params().unwrap();
    assert_eq!(back.weights(), theta.weights());
    assert_eq!(back.means(), theta.means());
    for k in 0..2 {
        assert_eq!(back.covariances()[k], theta.covariances()[k]);
    }
}
