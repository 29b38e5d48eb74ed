#![allow(non_snake_case)]

use super::context::{DiffContext, RowMask};
use super::FlatLayout;
use crate::gmm::{Dataset, EmConfig, GmmParams};
use ndarray::{Array1, Array2};

/// Assembles the p x p block matrix `dF/dtheta(theta, X)`.
///
/// With `cfg.fix_weights` the weight rows vanish (the weight update is the
/// constant `w_0`); with `!cfg.update_covariances` the covariance rows
/// vanish. Columns are left as the formulas dictate: the corresponding
/// Jacobian rows are zero along the iteration, so the columns never
/// contribute.
pub fn dF_dtheta(theta: &GmmParams, x: &Dataset, cfg: &EmConfig) -> Array2<f64> {
    let ctx = DiffContext::new(theta, x);
    df_dtheta_from_ctx(&ctx, &RowMask::from_cfg(cfg))
}

pub(crate) fn df_dtheta_from_ctx(ctx: &DiffContext, mask: &RowMask) -> Array2<f64> {
    let (n, k, d) = (ctx.n, ctx.k, ctx.d);
    let layout = FlatLayout { k, d };
    let p = layout.len();
    let mut out = Array2::<f64>::zeros((p, p));
    let n_f = n as f64;

    // Per (component pair) accumulators reused across column kinds:
    //   sum0 - plain coefficient sums (column-indexed),
    //   sum1 - coefficient * c_ik sums,
    //   sum2 - coefficient * c_ik c_ik^T sums.
    for kk in 0..k {
        let gk = ctx.gamma_sums[kk];
        for l in 0..k {
            // --- columns w(l): coefficient dgamma_dw(i, kk, l) ---
            let mut w_sum0 = 0.0;
            let mut w_sum1 = vec![0.0; d];
            let mut w_sum2 = vec![0.0; d * d];
            for i in 0..n {
                let co = ctx.dgamma_dw(i, kk, l);
                w_sum0 += co;
                for a in 0..d {
                    let ca = ctx.c[[i, kk, a]];
                    w_sum1[a] += co * ca;
                    for b in 0..d {
                        w_sum2[a * d + b] += co * ca * ctx.c[[i, kk, b]];
                    }
                }
            }
            if mask.weights_active {
                out[[layout.w(kk), layout.w(l)]] = w_sum0 / n_f;
            }
            for a in 0..d {
                out[[layout.m(kk, a), layout.w(l)]] = w_sum1[a] / gk;
            }
            if mask.covs_active {
                for a in 0..d {
                    for b in 0..d {
                        let u_a = w_sum1[a] / gk;
                        let u_b = w_sum1[b] / gk;
                        out[[layout.sig(kk, a, b), layout.w(l)]] = w_sum2[a * d + b] / gk
                            - w_sum0 * ctx.s_mat[kk][[a, b]] / (gk * gk)
                            - (u_a * ctx.s[[kk, b]] + ctx.s[[kk, a]] * u_b) / gk;
                    }
                }
            }

            // --- columns m(l, c): coefficient factor * q_il[c] ---
            let mut m_sum0 = vec![0.0; d];
            let mut m_sum1 = vec![0.0; d * d]; // [c, a]
            let mut m_sum2 = vec![0.0; d * d * d]; // [c, a, b]
            for i in 0..n {
                let f = ctx.dgamma_dm_factor(i, kk, l);
                for c in 0..d {
                    let co = f * ctx.q[[i, l, c]];
                    m_sum0[c] += co;
                    for a in 0..d {
                        let ca = ctx.c[[i, kk, a]];
                        m_sum1[c * d + a] += co * ca;
                        for b in 0..d {
                            m_sum2[(c * d + a) * d + b] += co * ca * ctx.c[[i, kk, b]];
                        }
                    }
                }
            }
            for c in 0..d {
                if mask.weights_active {
                    out[[layout.w(kk), layout.m(l, c)]] = m_sum0[c] / n_f;
                }
                for a in 0..d {
                    out[[layout.m(kk, a), layout.m(l, c)]] = m_sum1[c * d + a] / gk;
                }
                if mask.covs_active {
                    for a in 0..d {
                        for b in 0..d {
                            let u_a = m_sum1[c * d + a] / gk;
                            let u_b = m_sum1[c * d + b] / gk;
                            out[[layout.sig(kk, a, b), layout.m(l, c)]] = m_sum2
                                [(c * d + a) * d + b]
                                / gk
                                - m_sum0[c] * ctx.s_mat[kk][[a, b]] / (gk * gk)
                                - (u_a * ctx.s[[kk, b]] + ctx.s[[kk, a]] * u_b) / gk;
                        }
                    }
                }
            }

            // --- columns sig(l, c, e): coefficient factor * E_il[c, e] ---
            let mut s_sum0 = vec![0.0; d * d];
            let mut s_sum1 = vec![0.0; d * d * d]; // [ce, a]
            let mut s_sum2 = vec![0.0; d * d * d * d]; // [ce, a, b]
            for i in 0..n {
                let f = ctx.dgamma_dsigma_factor(i, kk, l);
                for c in 0..d {
                    for e in 0..d {
                        let co = f * ctx.e_block(i, l, c, e);
                        let ce = c * d + e;
                        s_sum0[ce] += co;
                        for a in 0..d {
                            let ca = ctx.c[[i, kk, a]];
                            s_sum1[ce * d + a] += co * ca;
                            for b in 0..d {
                                s_sum2[(ce * d + a) * d + b] += co * ca * ctx.c[[i, kk, b]];
                            }
                        }
                    }
                }
            }
            for c in 0..d {
                for e in 0..d {
                    let ce = c * d + e;
                    if mask.weights_active {
                        out[[layout.w(kk), layout.sig(l, c, e)]] = s_sum0[ce] / n_f;
                    }
                    for a in 0..d {
                        out[[layout.m(kk, a), layout.sig(l, c, e)]] = s_sum1[ce * d + a] / gk;
                    }
                    if mask.covs_active {
                        for a in 0..d {
                            for b in 0..d {
                                let u_a = s_sum1[ce * d + a] / gk;
                                let u_b = s_sum1[ce * d + b] / gk;
                                out[[layout.sig(kk, a, b), layout.sig(l, c, e)]] = s_sum2
                                    [(ce * d + a) * d + b]
                                    / gk
                                    - s_sum0[ce] * ctx.s_mat[kk][[a, b]] / (gk * gk)
                                    - (u_a * ctx.s[[kk, b]] + ctx.s[[kk, a]] * u_b) / gk;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Assembles the p x (n d) block matrix `dF/dX(theta, X)`.
pub fn dF_dx(theta: &GmmParams, x: &Dataset, cfg: &EmConfig) -> Array2<f64> {
    let ctx = DiffContext::new(theta, x);
    df_dx_from_ctx(&ctx, &RowMask::from_cfg(cfg))
}

pub(crate) fn df_dx_from_ctx(ctx: &DiffContext, mask: &RowMask) -> Array2<f64> {
    let (n, k, d) = (ctx.n, ctx.k, ctx.d);
    let layout = FlatLayout { k, d };
    let p = layout.len();
    let mut out = Array2::<f64>::zeros((p, n * d));
    let n_f = n as f64;

    for i in 0..n {
        for kk in 0..k {
            let gk = ctx.gamma_sums[kk];
            let gik = ctx.gamma[[i, kk]];
            for c in 0..d {
                let col = i * d + c;
                let vc = ctx.v[[i, kk, c]];
                if mask.weights_active {
                    out[[layout.w(kk), col]] = vc / n_f;
                }
                // dF_m/dX: (gamma_ik I + c_ik v_ik^T) / Gamma_k.
                for a in 0..d {
                    let kron = if a == c { gik } else { 0.0 };
                    out[[layout.m(kk, a), col]] = (kron + ctx.c[[i, kk, a]] * vc) / gk;
                }
                if mask.covs_active {
                    for a in 0..d {
                        let ca = ctx.c[[i, kk, a]];
                        let m_ac = out[[layout.m(kk, a), col]];
                        for b in 0..d {
                            let cb = ctx.c[[i, kk, b]];
                            let m_bc = out[[layout.m(kk, b), col]];
                            let mut val = (ca * cb - ctx.s_mat[kk][[a, b]] / gk) * vc / gk;
                            val -= (m_ac * ctx.s[[kk, b]] + ctx.s[[kk, a]] * m_bc) / gk;
                            let kron_a = if a == c { cb } else { 0.0 };
                            let kron_b = if b == c { ca } else { 0.0 };
                            val += gik * (kron_a + kron_b) / gk;
                            out[[layout.sig(kk, a, b), col]] = val;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Left product `u^T dF/dX` computed sample by sample without materialising
/// the p x (n d) matrix; this is the memory-lean path used by the flows.
pub fn df_dx_vjp(theta: &GmmParams, x: &Dataset, cfg: &EmConfig, u: &Array1<f64>) -> Array2<f64> {
    let ctx = DiffContext::new(theta, x);
    df_dx_vjp_from_ctx(&ctx, &RowMask::from_cfg(cfg), u)
}

pub(crate) fn df_dx_vjp_from_ctx(
    ctx: &DiffContext,
    mask: &RowMask,
    u: &Array1<f64>,
) -> Array2<f64> {
    let (n, k, d) = (ctx.n, ctx.k, ctx.d);
    let layout = FlatLayout { k, d };
    assert_eq!(u.len(), layout.len(), "cotangent length mismatch");
    let n_f = n as f64;
    let mut out = Array2::<f64>::zeros((n, d));

    // Component-level precomputations independent of the sample index.
    let mut u_dot_smat = vec![0.0; k]; // <U_k, S_k>
    let mut us = vec![vec![0.0; d]; k]; // U_k s_k
    let mut uts = vec![vec![0.0; d]; k]; // U_k^T s_k
    for kk in 0..k {
        for a in 0..d {
            for b in 0..d {
                let uab = u[layout.sig(kk, a, b)];
                u_dot_smat[kk] += uab * ctx.s_mat[kk][[a, b]];
                us[kk][a] += uab * ctx.s[[kk, b]];
                uts[kk][b] += uab * ctx.s[[kk, a]];
            }
        }
    }

    for i in 0..n {
        for kk in 0..k {
            let gk = ctx.gamma_sums[kk];
            let gik = ctx.gamma[[i, kk]];

            // dF_m rows: u_m[k] . column of (gamma I + c v^T)/Gamma.
            let mut um_dot_c = 0.0;
            for a in 0..d {
                um_dot_c += u[layout.m(kk, a)] * ctx.c[[i, kk, a]];
            }

            // dF_Sigma rows, expanded against U_k = u_S[k].
            let (mut cuc, mut c_dot_us, mut c_dot_uts) = (0.0, 0.0, 0.0);
            let mut y = vec![0.0; d]; // (U + U^T) c
            if mask.covs_active {
                for a in 0..d {
                    let ca = ctx.c[[i, kk, a]];
                    c_dot_us += ca * us[kk][a];
                    c_dot_uts += ca * uts[kk][a];
                    for b in 0..d {
                        let uab = u[layout.sig(kk, a, b)];
                        let cb = ctx.c[[i, kk, b]];
                        cuc += uab * ca * cb;
                        y[a] += uab * cb;
                        y[b] += uab * ca;
                    }
                }
            }

            for c in 0..d {
                let vc = ctx.v[[i, kk, c]];
                let mut acc = 0.0;
                if mask.weights_active {
                    acc += u[layout.w(kk)] * vc / n_f;
                }
                acc += (gik * u[layout.m(kk, c)] + um_dot_c * vc) / gk;
                if mask.covs_active {
                    acc += (cuc - u_dot_smat[kk] / gk) * vc / gk;
                    // Correction terms built from s_k (zero up to rounding).
                    let m_term = gik * (us[kk][c] + uts[kk][c]) + (c_dot_us + c_dot_uts) * vc;
                    acc -= m_term / (gk * gk);
                    acc += gik * y[c] / gk;
                }
                out[[i, c]] += acc;
            }
        }
    }
    out
}
