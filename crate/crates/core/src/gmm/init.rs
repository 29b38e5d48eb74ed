use super::{Dataset, GmmParams};
use crate::error::{CoreError, Result};
use crate::linalg::{symmetrise, SpdMatrix};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// k-means++ initialisation: component means are points selected by the
/// usual squared-distance sampling, weights are uniform `1/K`, and every
/// covariance is the global empirical covariance plus `eps_r I`.
///
/// Deterministic for a fixed seed (ChaCha8). On exactly tied cumulative
/// weights the lowest index wins.
pub fn kmeanspp_init(x: &Dataset, k: usize, seed: u64, eps_r: f64) -> Result<GmmParams> {
    let (n, d) = (x.n(), x.dim());
    if k == 0 {
        return Err(CoreError::Argument("need at least one component".into()));
    }
    if k > n {
        return Err(CoreError::Argument(format!(
            "cannot select {k} centres from {n} points"
        )));
    }
    let pts = x.points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centres: Vec<usize> = Vec::with_capacity(k);
    centres.push(rng.gen_range(0..n));
    let mut dist2 = Array1::<f64>::zeros(n);
    let sq = |i: usize, c: usize| -> f64 {
        (0..d).map(|a| (pts[[i, a]] - pts[[c, a]]).powi(2)).sum()
    };
    for i in 0..n {
        dist2[i] = sq(i, centres[0]);
    }
    while centres.len() < k {
        let total: f64 = dist2.sum();
        let pick = if total > 0.0 {
            let u: f64 = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for i in 0..n {
                acc += dist2[i];
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining distances vanish (duplicated points): first
            // index not yet selected.
            (0..n)
                .find(|i| !centres.contains(i))
                .ok_or_else(|| CoreError::Argument("not enough distinct points".into()))?
        };
        centres.push(pick);
        for i in 0..n {
            let s = sq(i, pick);
            if s < dist2[i] {
                dist2[i] = s;
            }
        }
    }

    let mut means = Array2::<f64>::zeros((k, d));
    for (c, &idx) in centres.iter().enumerate() {
        means.row_mut(c).assign(&pts.row(idx));
    }

    let mean = pts.mean_axis(ndarray::Axis(0)).expect("n > 0");
    let mut cov = Array2::<f64>::zeros((d, d));
    for i in 0..n {
        for a in 0..d {
            let da = pts[[i, a]] - mean[a];
            for b in 0..d {
                cov[[a, b]] += da * (pts[[i, b]] - mean[b]);
            }
        }
    }
    cov.mapv_inplace(|v| v / n as f64);
    let mut cov = symmetrise(&cov);
    for a in 0..d {
        cov[[a, a]] += eps_r;
    }
    let cov = SpdMatrix::new(cov)
        .map_err(|_| CoreError::DegenerateCovariance { index: 0 })?;

    let weights = Array1::from_elem(k, 1.0 / k as f64);
    GmmParams::new(weights, means, vec![cov; k])
}
