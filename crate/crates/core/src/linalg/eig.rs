use ndarray::{Array1, Array2};

/// Eigendecomposition of a symmetric matrix: `a = P diag(lambda) P^T` with
/// eigenvalues sorted ascending and orthonormal columns in `P`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: Array2<f64>,
}

impl EigenDecomposition {
    /// Rebuilds `P diag(lambda) P^T`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let d = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for j in 0..d {
            for i in 0..d {
                scaled[[i, j]] *= self.eigenvalues[j];
            }
        }
        scaled.dot(&self.eigenvectors.t())
    }
}

/// Cyclic Jacobi rotations on the symmetric part of `a`.
///
/// Suited to the small dense matrices used throughout (`d <= 64`); sweeps
/// until the off-diagonal mass is negligible relative to the Frobenius norm.
pub fn jacobi_eigh(a: &Array2<f64>) -> EigenDecomposition {
    let d = a.nrows();
    assert_eq!(d, a.ncols(), "jacobi_eigh requires a square matrix");
    let mut m = super::symmetrise(a);
    let mut p = Array2::<f64>::eye(d);
    if d <= 1 {
        return EigenDecomposition {
            eigenvalues: Array1::from_iter(m.iter().copied()),
            eigenvectors: p,
        };
    }

    let fro = super::fro_norm(&m).max(f64::MIN_POSITIVE);
    let tol = 1e-15 * fro;
    const MAX_SWEEPS: usize = 64;

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for i in 0..d {
            for j in (i + 1)..d {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let apq = m[[i, j]];
                if apq.abs() <= tol / (d as f64) {
                    continue;
                }
                let app = m[[i, i]];
                let aqq = m[[j, j]];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..d {
                    let mik = m[[i, k]];
                    let mjk = m[[j, k]];
                    m[[i, k]] = c * mik - s * mjk;
                    m[[j, k]] = s * mik + c * mjk;
                }
                for k in 0..d {
                    let mki = m[[k, i]];
                    let mkj = m[[k, j]];
                    m[[k, i]] = c * mki - s * mkj;
                    m[[k, j]] = s * mki + c * mkj;
                }
                for k in 0..d {
                    let pki = p[[k, i]];
                    let pkj = p[[k, j]];
                    p[[k, i]] = c * pki - s * pkj;
                    p[[k, j]] = s * pki + c * pkj;
                }
            }
        }
    }

    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).unwrap());
    let eigenvalues = Array1::from_iter(idx.iter().map(|&i| m[[i, i]]));
    let mut eigenvectors = Array2::<f64>::zeros((d, d));
    for (col, &i) in idx.iter().enumerate() {
        for r in 0..d {
            eigenvectors[[r, col]] = p[[r, i]];
        }
    }
    EigenDecomposition {
        eigenvalues,
        eigenvectors,
    }
}
