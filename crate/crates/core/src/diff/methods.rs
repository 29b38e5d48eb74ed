use super::context::{DiffContext, RowMask};
use super::fmap::{df_dtheta_from_ctx, df_dx_from_ctx, df_dx_vjp_from_ctx};
use super::{FlatParamVector, GradMethod, GradientReport};
use crate::error::{CoreError, Result};
use crate::gmm::{em_trajectory, fixed_point_residual, m_step, Dataset, EmConfig, GmmParams};
use crate::linalg::{lu_factor, spectral_norm};
use ndarray::{Array1, Array2};

/// Condition-estimate threshold beyond which `I - dF/dtheta` is declared
/// numerically singular (a degenerate fixed point).
pub const AI_SINGULAR_COND: f64 = 1e14;
/// Power-iteration budget for the reported spectral norm.
pub const SPECTRAL_NORM_ITERS: usize = 100;
pub const SPECTRAL_NORM_TOL: f64 = 1e-10;

fn report_at(
    theta: &GmmParams,
    x: &Dataset,
    cfg: &EmConfig,
    method: GradMethod,
    jacobian: Array2<f64>,
    d_theta: &Array2<f64>,
) -> Result<GradientReport> {
    Ok(GradientReport {
        method,
        jacobian,
        fixed_point_residual: fixed_point_residual(theta, x, cfg)?,
        spectral_norm_df_dtheta: spectral_norm(d_theta, SPECTRAL_NORM_ITERS, SPECTRAL_NORM_TOL),
    })
}

/// Exact unrolled chain rule: `J_{t+1} = dF/dtheta(theta_t, X) J_t +
/// dF/dX(theta_t, X)` with `J_0 = 0`, which is what backpropagation through
/// the T-step EM loop computes. The forward trajectory is stored and
/// replayed.
pub fn jacobian_ad(theta0: &GmmParams, x: &Dataset, cfg: &EmConfig) -> Result<GradientReport> {
    super::check_shapes(theta0, x)?;
    let mask = RowMask::from_cfg(cfg);
    let traj = em_trajectory(theta0, x, cfg)?;
    let p = theta0.flat_len();
    let nd = x.n() * x.dim();
    let mut j = Array2::<f64>::zeros((p, nd));
    for theta_t in traj.iter().take(cfg.iterations) {
        let ctx = DiffContext::new(theta_t, x);
        let a = df_dtheta_from_ctx(&ctx, &mask);
        let b = df_dx_from_ctx(&ctx, &mask);
        j = a.dot(&j) + &b;
    }
    let theta_final = traj.last().expect("trajectory is never empty");
    let ctx = DiffContext::new(theta_final, x);
    let a_final = df_dtheta_from_ctx(&ctx, &mask);
    report_at(theta_final, x, cfg, GradMethod::Ad, j, &a_final)
}

/// Approximate implicit gradient at a (near) fixed point:
/// `(I - dF/dtheta(theta_T, X)) J = dF/dX(theta_T, X)` solved by dense LU
/// with partial pivoting. The residual is reported, not enforced.
pub fn jacobian_ai(theta_t: &GmmParams, x: &Dataset, cfg: &EmConfig) -> Result<GradientReport> {
    super::check_shapes(theta_t, x)?;
    let mask = RowMask::from_cfg(cfg);
    let ctx = DiffContext::new(theta_t, x);
    let a = df_dtheta_from_ctx(&ctx, &mask);
    let b = df_dx_from_ctx(&ctx, &mask);
    let p = theta_t.flat_len();
    let mut system = Array2::<f64>::eye(p);
    system -= &a;
    let lu = lu_factor(&system)?;
    if lu.cond_estimate > AI_SINGULAR_COND {
        return Err(CoreError::SingularSystem {
            cond: lu.cond_estimate,
        });
    }
    let j = lu.solve_mat(&b);
    report_at(theta_t, x, cfg, GradMethod::Ai, j, &a)
}

/// One-step gradient: `J_OS = dF/dX(theta_{T-1}, X)`, no linear solve.
pub fn jacobian_os(
    theta_t_minus_1: &GmmParams,
    x: &Dataset,
    cfg: &EmConfig,
) -> Result<GradientReport> {
    super::check_shapes(theta_t_minus_1, x)?;
    let mask = RowMask::from_cfg(cfg);
    let ctx = DiffContext::new(theta_t_minus_1, x);
    let a = df_dtheta_from_ctx(&ctx, &mask);
    let j = df_dx_from_ctx(&ctx, &mask);
    report_at(theta_t_minus_1, x, cfg, GradMethod::Os, j, &a)
}

/// Central finite differences of the full EM run over every coordinate of
/// `X`. Quadratic cost; a test-time oracle, not a production path.
pub fn jacobian_fd(
    theta0: &GmmParams,
    x: &Dataset,
    cfg: &EmConfig,
    eps: f64,
) -> Result<GradientReport> {
    super::check_shapes(theta0, x)?;
    if eps <= 0.0 {
        return Err(CoreError::Argument("fd step must be positive".into()));
    }
    let (n, d) = (x.n(), x.dim());
    let p = theta0.flat_len();
    let mut j = Array2::<f64>::zeros((p, n * d));

    let run = |pts: ndarray::Array2<f64>| -> Result<Array1<f64>> {
        let data = Dataset::new_unchecked(pts);
        let traj = em_trajectory(theta0, &data, cfg)?;
        Ok(FlatParamVector::from_params(traj.last().unwrap()).data)
    };

    for i in 0..n {
        for c in 0..d {
            let mut plus = x.points().clone();
            plus[[i, c]] += eps;
            let mut minus = x.points().clone();
            minus[[i, c]] -= eps;
            let fp = run(plus)?;
            let fm = run(minus)?;
            let col = i * d + c;
            for r in 0..p {
                j[[r, col]] = (fp[r] - fm[r]) / (2.0 * eps);
            }
        }
    }

    let traj = em_trajectory(theta0, x, cfg)?;
    let theta_final = traj.last().unwrap();
    let ctx = DiffContext::new(theta_final, x);
    let a = df_dtheta_from_ctx(&ctx, &RowMask::from_cfg(cfg));
    report_at(theta_final, x, cfg, GradMethod::Fd, j, &a)
}

/// One warm-start step (the online one-step gradient): advances the
/// parameters by a single EM application and moves the data against
/// `loss_grad^T dF/dX(theta_t, X_t)`, treating `theta_t` as constant.
///
/// `loss_grad` must be the loss gradient evaluated at `F(theta_t, x_t)` in
/// flat layout.
pub fn warm_start_step(
    theta_t: &GmmParams,
    x_t: &Dataset,
    loss_grad: &Array1<f64>,
    lr: f64,
    cfg: &EmConfig,
) -> Result<(GmmParams, Dataset)> {
    super::check_shapes(theta_t, x_t)?;
    let theta_next = m_step(theta_t, x_t, cfg)?;
    let ctx = DiffContext::new(theta_t, x_t);
    let grad = df_dx_vjp_from_ctx(&ctx, &RowMask::from_cfg(cfg), loss_grad);
    let mut pts = x_t.points().clone();
    pts.scaled_add(-lr, &grad);
    Ok((theta_next, Dataset::new_unchecked(pts)))
}

/// Reverse-mode product `g^T d(theta_T)/dX` through the unrolled iteration:
/// same value as `g^T . jacobian_ad(..).jacobian` at `O(T K d^2 + n d)`
/// memory.
pub fn pullback_ad(
    theta0: &GmmParams,
    x: &Dataset,
    cfg: &EmConfig,
    g: &Array1<f64>,
) -> Result<(Array2<f64>, GmmParams)> {
    super::check_shapes(theta0, x)?;
    let mask = RowMask::from_cfg(cfg);
    let traj = em_trajectory(theta0, x, cfg)?;
    let mut u = g.clone();
    let mut grad = Array2::<f64>::zeros((x.n(), x.dim()));
    for t in (0..cfg.iterations).rev() {
        let ctx = DiffContext::new(&traj[t], x);
        grad += &df_dx_vjp_from_ctx(&ctx, &mask, &u);
        if t > 0 {
            let a = df_dtheta_from_ctx(&ctx, &mask);
            u = a.t().dot(&u);
        }
    }
    Ok((grad, traj.into_iter().last().unwrap()))
}

/// Implicit-gradient product: solve `(I - dF/dtheta)^T y = g` at the final
/// iterate, then apply the data VJP.
pub fn pullback_ai(
    theta_t: &GmmParams,
    x: &Dataset,
    cfg: &EmConfig,
    g: &Array1<f64>,
) -> Result<Array2<f64>> {
    super::check_shapes(theta_t, x)?;
    let mask = RowMask::from_cfg(cfg);
    let ctx = DiffContext::new(theta_t, x);
    let a = df_dtheta_from_ctx(&ctx, &mask);
    let p = theta_t.flat_len();
    let mut system = Array2::<f64>::eye(p);
    system -= &a;
    let lu = lu_factor(&system.t().to_owned())?;
    if lu.cond_estimate > AI_SINGULAR_COND {
        return Err(CoreError::SingularSystem {
            cond: lu.cond_estimate,
        });
    }
    let y = lu.solve_vec(g);
    Ok(df_dx_vjp_from_ctx(&ctx, &mask, &y))
}

/// One-step product: data VJP at the penultimate iterate.
pub fn pullback_os(
    theta_t_minus_1: &GmmParams,
    x: &Dataset,
    cfg: &EmConfig,
    g: &Array1<f64>,
) -> Result<Array2<f64>> {
    super::check_shapes(theta_t_minus_1, x)?;
    let ctx = DiffContext::new(theta_t_minus_1, x);
    Ok(df_dx_vjp_from_ctx(&ctx, &RowMask::from_cfg(cfg), g))
}
