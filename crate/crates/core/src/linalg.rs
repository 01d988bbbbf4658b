//! Dense SPD helpers. Everything downstream goes through [`Cholesky`]
//! solves; no explicit inverse is ever formed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative pivot tolerance: a squared pivot must exceed this times the
/// largest diagonal entry.
pub const PIVOT_TOLERANCE: f64 = 1e-10;

/// Relative tolerance on `|s_ij - s_ji|` before a matrix is rejected.
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    lower: DMatrix<f64>,
}

impl Cholesky {
    pub fn factor(matrix: &DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if n == 0 || matrix.ncols() != n {
            return Err(Error::Dimension(format!(
                "expected a non-empty square matrix, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let max_diag = matrix.diagonal().iter().cloned().fold(0.0_f64, f64::max);
        let tolerance = PIVOT_TOLERANCE * max_diag;
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut d = matrix[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > tolerance) || max_diag <= 0.0 {
                return Err(Error::NotPositiveDefinite {
                    index: j,
                    pivot: d,
                    tolerance,
                });
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = matrix[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    /// Solves `S x = b` by forward then backward substitution.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.dim();
        assert_eq!(b.len(), n, "right-hand side length mismatch");
        let l = &self.lower;
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    /// `ln det S = 2 Σ ln L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Checks symmetry to [`SYMMETRY_TOLERANCE`] (relative to the largest
/// entry) and returns `(S + Sᵀ) / 2`.
pub fn symmetrize(matrix: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = matrix.nrows();
    if matrix.ncols() != n {
        return Err(Error::Dimension(format!(
            "covariance must be square, got {}x{}",
            n,
            matrix.ncols()
        )));
    }
    let scale = matrix.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let tolerance = SYMMETRY_TOLERANCE * scale;
    let mut max_abs_diff = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_abs_diff = max_abs_diff.max((matrix[(i, j)] - matrix[(j, i)]).abs());
        }
    }
    if max_abs_diff > tolerance {
        return Err(Error::Asymmetric {
            max_abs_diff,
            tolerance,
        });
    }
    Ok((matrix + matrix.transpose()) * 0.5)
}

/// `xᵀ S x`.
pub fn quad_form(matrix: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    x.dot(&(matrix * x))
}

/// Neumaier-compensated sum; order-dependent only through the iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}
