use crate::error::{CoreError, Result};
use ndarray::{Array1, Array2};

/// LU factorisation with partial pivoting, kept packed in a single matrix.
#[derive(Debug, Clone)]
pub struct LuFactor {
    lu: Array2<f64>,
    perm: Vec<usize>,
    /// Rough condition estimate: `max |U_ii| / min |U_ii|`.
    pub cond_estimate: f64,
}

/// Factorises a square matrix. Fails when a pivot is exactly zero.
pub fn lu_factor(a: &Array2<f64>) -> Result<LuFactor> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "lu_factor requires a square matrix");
    let mut lu = a.clone();
    let mut perm: Vec<usize> = (0..n).collect();

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = lu[[col, col]].abs();
        for r in (col + 1)..n {
            let v = lu[[r, col]].abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val == 0.0 {
            return Err(CoreError::SingularSystem { cond: f64::INFINITY });
        }
        if pivot_row != col {
            perm.swap(col, pivot_row);
            for c in 0..n {
                let tmp = lu[[col, c]];
                lu[[col, c]] = lu[[pivot_row, c]];
                lu[[pivot_row, c]] = tmp;
            }
        }
        let piv = lu[[col, col]];
        for r in (col + 1)..n {
            let f = lu[[r, col]] / piv;
            lu[[r, col]] = f;
            for c in (col + 1)..n {
                lu[[r, c]] -= f * lu[[col, c]];
            }
        }
    }

    let mut umax = 0.0_f64;
    let mut umin = f64::INFINITY;
    for i in 0..n {
        let u = lu[[i, i]].abs();
        umax = umax.max(u);
        umin = umin.min(u);
    }
    let cond_estimate = if umin == 0.0 { f64::INFINITY } else { umax / umin };

    Ok(LuFactor {
        lu,
        perm,
        cond_estimate,
    })
}

impl LuFactor {
    pub fn solve_vec(&self, b: &Array1<f64>) -> Array1<f64> {
        let n = self.perm.len();
        let mut x = Array1::<f64>::zeros(n);
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        // Forward substitution with the unit-diagonal L.
        for i in 0..n {
            for j in 0..i {
                let f = self.lu[[i, j]] * x[j];
                x[i] -= f;
            }
        }
        // Back substitution with U.
        for i in (0..n).rev() {
            for j in (i + 1)..n {
                let f = self.lu[[i, j]] * x[j];
                x[i] -= f;
            }
            x[i] /= self.lu[[i, i]];
        }
        x
    }

    /// Solves `A X = B` column by column.
    pub fn solve_mat(&self, b: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(b.raw_dim());
        for c in 0..b.ncols() {
            let col = self.solve_vec(&b.column(c).to_owned());
            for r in 0..b.nrows() {
                out[[r, c]] = col[r];
            }
        }
        out
    }
}
