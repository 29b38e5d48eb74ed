use crate::gmm::{Dataset, EmConfig, GmmParams};
use crate::linalg::{cholesky, logsumexp};
use ndarray::{Array1, Array2, Array3};

/// Shared quantities entering every differential block at a fixed
/// `(theta, X)`: responsibilities and their normalisers, whitened residuals
/// `q_ik = Sigma_k^{-1}(x_i - m_k)`, the updated means `F_m`, residuals
/// centred at the updated means, and the per-sample data-direction vectors
/// `v_ik` of `dgamma/dX`.
pub struct DiffContext<'a> {
    pub theta: &'a GmmParams,
    pub x: &'a Dataset,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// `gamma_ik` (n x K).
    pub gamma: Array2<f64>,
    /// `g_ik / Z_i` (n x K); equals `gamma_ik / w_k`, evaluated in log space.
    pub e: Array2<f64>,
    /// `Gamma_k = sum_i gamma_ik`.
    pub gamma_sums: Array1<f64>,
    /// `q_ik = Sigma_k^{-1}(x_i - m_k)` (n, K, d).
    pub q: Array3<f64>,
    /// Precision matrices `Sigma_k^{-1}`.
    pub sigma_inv: Vec<Array2<f64>>,
    /// Updated means `F_m(theta, X)` (K x d).
    pub f_m: Array2<f64>,
    /// `c_ik = x_i - F_mk` (n, K, d).
    pub c: Array3<f64>,
    /// `s_k = sum_i gamma_ik c_ik` (K x d); zero in exact arithmetic.
    pub s: Array2<f64>,
    /// `S_k = sum_i gamma_ik c_ik c_ik^T` (K of d x d).
    pub s_mat: Vec<Array2<f64>>,
    /// `t_i = sum_l gamma_il q_il` (n x d).
    pub t: Array2<f64>,
    /// `v_ik = gamma_ik (t_i - q_ik)` (n, K, d): the only nonzero entries of
    /// `dgamma/dX`.
    pub v: Array3<f64>,
}

impl<'a> DiffContext<'a> {
    pub fn new(theta: &'a GmmParams, x: &'a Dataset) -> Self {
        let (n, d, k) = (x.n(), x.dim(), theta.n_components());
        assert_eq!(theta.dim(), d, "dimension mismatch");
        let pts = x.points();

        let log_g = crate::gmm::log_density_matrix(theta, x);
        let log_w: Vec<f64> = theta.weights().iter().map(|w| w.ln()).collect();
        let mut gamma = Array2::<f64>::zeros((n, k));
        let mut e = Array2::<f64>::zeros((n, k));
        let mut row = Array1::<f64>::zeros(k);
        for i in 0..n {
            for c in 0..k {
                row[c] = log_w[c] + log_g[[i, c]];
            }
            let z = logsumexp(row.view()).expect("k >= 1");
            for c in 0..k {
                gamma[[i, c]] = (row[c] - z).exp();
                e[[i, c]] = (log_g[[i, c]] - z).exp();
            }
        }

        let mut gamma_sums = Array1::<f64>::zeros(k);
        for i in 0..n {
            for c in 0..k {
                gamma_sums[c] += gamma[[i, c]];
            }
        }
        // A component whose mass underflowed has identically zero
        // numerators everywhere; the floor turns its 0/0 blocks into the
        // correct zero limit instead of NaN.
        for c in 0..k {
            if gamma_sums[c] <= 0.0 {
                gamma_sums[c] = f64::MIN_POSITIVE;
            }
        }

        let sigma_inv: Vec<Array2<f64>> = theta
            .covariances()
            .iter()
            .map(|s| cholesky(s).inverse())
            .collect();

        let mut q = Array3::<f64>::zeros((n, k, d));
        for i in 0..n {
            for c in 0..k {
                for a in 0..d {
                    let mut acc = 0.0;
                    for b in 0..d {
                        acc += sigma_inv[c][[a, b]] * (pts[[i, b]] - theta.means()[[c, b]]);
                    }
                    q[[i, c, a]] = acc;
                }
            }
        }

        let mut f_m = Array2::<f64>::zeros((k, d));
        for i in 0..n {
            for c in 0..k {
                for a in 0..d {
                    f_m[[c, a]] += gamma[[i, c]] * pts[[i, a]];
                }
            }
        }
        for c in 0..k {
            for a in 0..d {
                f_m[[c, a]] /= gamma_sums[c];
            }
        }

        let mut c_res = Array3::<f64>::zeros((n, k, d));
        let mut s = Array2::<f64>::zeros((k, d));
        let mut s_mat = vec![Array2::<f64>::zeros((d, d)); k];
        for i in 0..n {
            for c in 0..k {
                let g = gamma[[i, c]];
                for a in 0..d {
                    let ca = pts[[i, a]] - f_m[[c, a]];
                    c_res[[i, c, a]] = ca;
                    s[[c, a]] += g * ca;
                }
                for a in 0..d {
                    let ca = c_res[[i, c, a]];
                    for b in 0..d {
                        s_mat[c][[a, b]] += g * ca * c_res[[i, c, b]];
                    }
                }
            }
        }

        let mut t = Array2::<f64>::zeros((n, d));
        for i in 0..n {
            for c in 0..k {
                let g = gamma[[i, c]];
                for a in 0..d {
                    t[[i, a]] += g * q[[i, c, a]];
                }
            }
        }
        let mut v = Array3::<f64>::zeros((n, k, d));
        for i in 0..n {
            for c in 0..k {
                let g = gamma[[i, c]];
                for a in 0..d {
                    v[[i, c, a]] = g * (t[[i, a]] - q[[i, c, a]]);
                }
            }
        }

        Self {
            theta,
            x,
            n,
            d,
            k,
            gamma,
            e,
            gamma_sums,
            q,
            sigma_inv,
            f_m,
            c: c_res,
            s,
            s_mat,
            t,
            v,
        }
    }

    /// Coefficient `[dgamma/dw]_{i,k,l} = e_ik delta_kl - gamma_ik e_il`.
    #[inline]
    pub fn dgamma_dw(&self, i: usize, k: usize, l: usize) -> f64 {
        let kron = if k == l { self.e[[i, k]] } else { 0.0 };
        kron - self.gamma[[i, k]] * self.e[[i, l]]
    }

    /// Scalar factor of `[dgamma/dm]_{i,k,l,.} = factor * q_il`.
    #[inline]
    pub fn dgamma_dm_factor(&self, i: usize, k: usize, l: usize) -> f64 {
        let kron = if k == l { 1.0 } else { 0.0 };
        self.gamma[[i, k]] * (kron - self.gamma[[i, l]])
    }

    /// Scalar factor of `[dgamma/dSigma]_{i,k,l,.,.} = factor * E_il` with
    /// `E_il = -Sigma_l^{-1} + q_il q_il^T`.
    #[inline]
    pub fn dgamma_dsigma_factor(&self, i: usize, k: usize, l: usize) -> f64 {
        0.5 * self.dgamma_dm_factor(i, k, l)
    }

    /// Entry `E_il[c,e] = -Sigma_l^{-1}[c,e] + q_il[c] q_il[e]`.
    #[inline]
    pub fn e_block(&self, i: usize, l: usize, c: usize, e: usize) -> f64 {
        -self.sigma_inv[l][[c, e]] + self.q[[i, l, c]] * self.q[[i, l, e]]
    }
}

/// Row-zeroing pattern implied by the EM variant: fixed weights freeze the
/// weight rows of both Jacobian blocks, frozen covariances freeze the
/// `Sigma` rows.
pub(crate) struct RowMask {
    pub weights_active: bool,
    pub covs_active: bool,
}

impl RowMask {
    pub fn from_cfg(cfg: &EmConfig) -> Self {
        Self {
            weights_active: !cfg.fix_weights,
            covs_active: cfg.update_covariances,
        }
    }
}
