use super::{Dataset, GmmParams};
use crate::linalg::cholesky;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Draws `n` i.i.d. samples: a component index from `Categorical(w)`, then
/// `m_k + L_k z` with `z` standard normal and `L_k` the covariance Cholesky
/// factor. ChaCha8-seeded, so fixed seeds reproduce bitwise.
///
/// The returned dataset is not screened for general position; callers that
/// feed it to EM with `eps_r = 0` should request `n >= d + 1` samples, which
/// satisfies the condition almost surely.
pub fn sample_gmm(theta: &GmmParams, n: usize, seed: u64) -> Dataset {
    assert!(n >= 1, "need at least one sample");
    let (k, d) = (theta.n_components(), theta.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chols: Vec<_> = theta.covariances().iter().map(cholesky).collect();

    let mut cumw = vec![0.0_f64; k];
    let mut acc = 0.0;
    for c in 0..k {
        acc += theta.weights()[c];
        cumw[c] = acc;
    }

    let mut pts = Array2::<f64>::zeros((n, d));
    let mut z = vec![0.0_f64; d];
    for i in 0..n {
        let u: f64 = rng.gen();
        let comp = cumw.iter().position(|&c| u < c).unwrap_or(k - 1);
        for za in z.iter_mut() {
            *za = rng.sample(StandardNormal);
        }
        let l = chols[comp].lower();
        for a in 0..d {
            let mut v = theta.means()[[comp, a]];
            for b in 0..=a {
                v += l[[a, b]] * z[b];
            }
            pts[[i, a]] = v;
        }
    }
    Dataset::new_unchecked(pts)
}
