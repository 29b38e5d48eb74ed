use super::eig::jacobi_eigh;
use super::{symmetrise, SYMMETRY_TOL};
use crate::error::{CoreError, Result};
use ndarray::{Array1, Array2, ArrayView1};

/// A validated symmetric positive definite matrix.
///
/// Construction symmetrises nothing: the input must already be symmetric to
/// within [`SYMMETRY_TOL`] relative, and must admit a Cholesky factorisation
/// with strictly positive pivots.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    entries: Array2<f64>,
}

impl SpdMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        Self::with_symmetry_tol(entries, SYMMETRY_TOL)
    }

    /// Like [`SpdMatrix::new`] with a caller-chosen symmetry tolerance.
    pub fn with_symmetry_tol(entries: Array2<f64>, sym_tol: f64) -> Result<Self> {
        let d = entries.nrows();
        if d == 0 || entries.ncols() != d {
            return Err(CoreError::Argument(format!(
                "SPD matrix must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let scale = super::fro_norm(&entries).max(f64::MIN_POSITIVE);
        for i in 0..d {
            for j in (i + 1)..d {
                if (entries[[i, j]] - entries[[j, i]]).abs() > sym_tol * scale {
                    return Err(CoreError::Argument(format!(
                        "matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        // Positive definiteness <=> Cholesky succeeds on the symmetric part.
        cholesky_raw(&symmetrise(&entries))?;
        Ok(Self { entries })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> Array2<f64> {
        self.entries
    }

    /// Scaled identity, handy for regularisers and tests.
    pub fn scaled_identity(d: usize, s: f64) -> Result<Self> {
        Self::new(Array2::eye(d) * s)
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.entries[[i, i]]).sum()
    }
}

/// Lower-triangular Cholesky factor `L` with `L L^T = a` and positive
/// diagonal.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: Array2<f64>,
}

impl CholeskyFactor {
    /// Factorises an arbitrary square matrix, failing with
    /// [`CoreError::DegenerateCovariance`] (carrying the pivot index) on a
    /// non-positive pivot. This is the entry point used to *detect* lost
    /// positive definiteness; for an already validated [`SpdMatrix`] use
    /// [`cholesky`].
    pub fn compute(a: &Array2<f64>) -> Result<Self> {
        cholesky_raw(a)
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    /// `log det(L L^T) = 2 sum_a log L_aa`, accumulated in log space.
    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim())
            .map(|i| self.lower[[i, i]].ln())
            .sum::<f64>()
    }

    /// Solves `L y = b` by forward substitution.
    pub fn solve_lower(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let d = self.dim();
        let mut y = Array1::<f64>::zeros(d);
        for i in 0..d {
            let mut s = b[i];
            for j in 0..i {
                s -= self.lower[[i, j]] * y[j];
            }
            y[i] = s / self.lower[[i, i]];
        }
        y
    }

    /// Solves `L^T x = b` by back substitution.
    pub fn solve_lower_t(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let d = self.dim();
        let mut x = Array1::<f64>::zeros(d);
        for i in (0..d).rev() {
            let mut s = b[i];
            for j in (i + 1)..d {
                s -= self.lower[[j, i]] * x[j];
            }
            x[i] = s / self.lower[[i, i]];
        }
        x
    }

    /// Solves `(L L^T) x = b`.
    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let y = self.solve_lower(b);
        self.solve_lower_t(y.view())
    }

    /// Dense inverse of `L L^T`, built column by column.
    pub fn inverse(&self) -> Array2<f64> {
        let d = self.dim();
        let mut inv = Array2::<f64>::zeros((d, d));
        let mut e = Array1::<f64>::zeros(d);
        for c in 0..d {
            e.fill(0.0);
            e[c] = 1.0;
            let col = self.solve(e.view());
            for r in 0..d {
                inv[[r, c]] = col[r];
            }
        }
        symmetrise(&inv)
    }

    pub fn reconstruct(&self) -> Array2<f64> {
        self.lower.dot(&self.lower.t())
    }
}

fn cholesky_raw(a: &Array2<f64>) -> Result<CholeskyFactor> {
    let d = a.nrows();
    let mut l = Array2::<f64>::zeros((d, d));
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return Err(CoreError::DegenerateCovariance { index: i });
                }
                l[[i, j]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Cholesky factor of a validated SPD matrix.
///
/// Cannot fail: positivity was established at construction of `a`.
pub fn cholesky(a: &SpdMatrix) -> CholeskyFactor {
    cholesky_raw(&symmetrise(a.entries())).expect("validated SPD matrix must factorise")
}

/// Unique PSD square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues are clamped at zero before the square root, so inputs that
/// are only semidefinite up to rounding are accepted; the output is
/// symmetrised.
pub fn spd_sqrt(a: &Array2<f64>) -> Array2<f64> {
    let dec = jacobi_eigh(a);
    let d = a.nrows();
    let mut scaled = dec.eigenvectors.clone();
    for j in 0..d {
        let s = dec.eigenvalues[j].max(0.0).sqrt();
        for i in 0..d {
            scaled[[i, j]] *= s;
        }
    }
    symmetrise(&scaled.dot(&dec.eigenvectors.t()))
}

/// Square root differential together with the near-singular mask flag.
#[derive(Debug, Clone)]
pub struct SqrtDifferential {
    pub matrix: Array2<f64>,
    /// Set when some divisor `sqrt(lambda_i) + sqrt(lambda_j)` vanished and
    /// the corresponding entry was zero-filled.
    pub near_singular: bool,
}

/// Differential of the matrix square root at `a` in the direction `h`.
///
/// With `a = P diag(lambda) P^T`, returns `P G P^T` where
/// `G_ij = [P^T H P]_ij / (sqrt(lambda_i) + sqrt(lambda_j))`, the unique
/// solution of the Sylvester equation `R X + X R = H` for `R = sqrt(a)`.
/// Vanishing divisors are zero-filled and flagged instead of guessed at.
pub fn spd_sqrt_differential(a: &Array2<f64>, h: &Array2<f64>) -> SqrtDifferential {
    let d = a.nrows();
    assert_eq!(h.nrows(), d, "direction must match the matrix dimension");
    let dec = jacobi_eigh(a);
    let sqrt_l: Vec<f64> = dec
        .eigenvalues
        .iter()
        .map(|&x| x.max(0.0).sqrt())
        .collect();
    let h_sym = symmetrise(h);
    let ph = dec.eigenvectors.t().dot(&h_sym).dot(&dec.eigenvectors);
    let mut g = Array2::<f64>::zeros((d, d));
    let mut near_singular = false;
    for i in 0..d {
        for j in 0..d {
            let div = sqrt_l[i] + sqrt_l[j];
            if div == 0.0 {
                near_singular = true;
                g[[i, j]] = 0.0;
            } else {
                g[[i, j]] = ph[[i, j]] / div;
            }
        }
    }
    let matrix = symmetrise(&dec.eigenvectors.dot(&g).dot(&dec.eigenvectors.t()));
    SqrtDifferential {
        matrix,
        near_singular,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        match CholeskyFactor::compute(&a) {
            Err(CoreError::DegenerateCovariance { index }) => assert_eq!(index, 1),
            other => panic!("expected degenerate covariance, got {other:?}"),
        }
    }

    #[test]
    fn spd_validation_rejects_asymmetric() {
        let a = array![[1.0, 0.5], [0.2, 1.0]];
        assert!(SpdMatrix::new(a).is_err());
    }

    #[test]
    fn lu_solves_identity() {
        let a = Array2::<f64>::eye(4);
        let f = lu_factor(&a).unwrap();
        let b = Array1::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let x = f.solve_vec(&b);
        for i in 0..4 {
            assert!((x[i] - b[i]).abs() < 1e-14);
        }
    }

    use super::super::{lu_factor, spectral_norm};
    use ndarray::Array1;

    #[test]
    fn spectral_norm_of_diagonal() {
        let a = array![[3.0, 0.0], [0.0, -5.0]];
        let s = spectral_norm(&a, 100, 1e-12);
        assert!((s - 5.0).abs() < 1e-9, "got {s}");
    }
}
