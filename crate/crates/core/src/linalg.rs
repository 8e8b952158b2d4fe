//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Outcome of a positive semi-definiteness check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub is_psd: bool,
    pub min_eigenvalue: f64,
}

/// Checks whether `matrix + jitter * I` admits a Cholesky factorization.
///
/// The matrix must be square and symmetric within `1e-10` (absolute, scaled
/// by the largest entry). The minimum eigenvalue of the unjittered matrix is
/// reported alongside the verdict.
pub fn is_psd(matrix: &DMatrix<f64>, jitter: f64) -> Result<PsdReport> {
    if !matrix.is_square() {
        return Err(Error::DimensionMismatch {
            expected: matrix.nrows(),
            actual: matrix.ncols(),
        });
    }
    if matrix.iter().any(|v| !v.is_finite()) || !jitter.is_finite() {
        return Err(Error::NonFinite("is_psd input"));
    }
    let scale = matrix.amax().max(1.0);
    if (matrix - matrix.transpose()).amax() > 1e-10 * scale {
        return Err(Error::InvalidParameter("matrix is not symmetric".into()));
    }
    let n = matrix.nrows();
    let min_eigenvalue = if n == 0 {
        0.0
    } else {
        matrix
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min)
    };
    let shifted = matrix + DMatrix::identity(n, n) * jitter;
    Ok(PsdReport {
        is_psd: shifted.cholesky().is_some(),
        min_eigenvalue,
    })
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower-triangular square root of a symmetric PSD matrix.
///
/// Unlike a plain Cholesky this tolerates zero pivots: a column whose pivot
/// falls below `tol * max_diag` is set to zero, so block-diagonal matrices with
/// structurally zero blocks factor exactly. Pivots below `-tol * max_diag`
/// mean the matrix is indefinite.
pub fn psd_sqrt(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: m.ncols(),
        });
    }
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < -tol * scale {
            return Err(Error::NotPsd { min_eigenvalue: d });
        }
        if d <= tol * scale {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

/// Ordinary least squares `min ‖A x − b‖` via SVD.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub solution: DVector<f64>,
    pub condition_number: f64,
    pub residual_norm: f64,
}

/// Solves the least-squares problem, failing with
/// [`Error::InsufficientExcitation`] when `cond(A)` exceeds `max_condition`.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, max_condition: f64) -> Result<LeastSquares> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            actual: b.len(),
        });
    }
    if a.nrows() < a.ncols() {
        return Err(Error::InsufficientExcitation(format!(
            "{} rows for {} unknowns",
            a.nrows(),
            a.ncols()
        )));
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let condition_number = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition_number <= max_condition) {
        return Err(Error::InsufficientExcitation(format!(
            "regressor condition number {condition_number:e}"
        )));
    }
    // Full column rank is guaranteed past the condition check.
    let qr = a.clone().qr();
    let solution = qr
        .r()
        .solve_upper_triangular(&(qr.q().transpose() * b))
        .ok_or_else(|| Error::InsufficientExcitation("singular regressor".into()))?;
    let residual_norm = (a * &solution - b).norm();
    Ok(LeastSquares {
        solution,
        condition_number,
        residual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psd_examples() {
        assert!(is_psd(&DMatrix::identity(5, 5), 0.0).unwrap().is_psd);
        let r = is_psd(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])), 0.0).unwrap();
        assert!(!r.is_psd);
        assert!((r.min_eigenvalue + 1.0).abs() < 1e-12);
        assert!(is_psd(&DMatrix::zeros(3, 3), 1e-9).unwrap().is_psd);
    }

    #[test]
    fn psd_rejects_non_square() {
        assert!(matches!(
            is_psd(&DMatrix::zeros(2, 3), 0.0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn psd_sqrt_handles_zero_blocks() {
        let mut m = DMatrix::<f64>::zeros(4, 4);
        m[(0, 0)] = 4.0;
        m[(0, 2)] = 2.0;
        m[(2, 0)] = 2.0;
        m[(2, 2)] = 5.0;
        let l = psd_sqrt(&m, 1e-12).unwrap();
        assert!((&l * l.transpose() - &m).amax() < 1e-12);
        assert_eq!(l.column(1).amax(), 0.0);
        assert_eq!(l.column(3).amax(), 0.0);
    }

    #[test]
    fn psd_sqrt_rejects_indefinite() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(psd_sqrt(&m, 1e-12).is_err());
    }

    #[test]
    fn least_squares_flags_rank_deficiency() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        let b = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!(matches!(
            least_squares(&a, &b, 1e10),
            Err(Error::InsufficientExcitation(_))
        ));
    }
}
