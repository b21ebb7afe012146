//! Dense helpers shared by the two filters.

use nalgebra::{DMatrix, DVector};

/// Replaces `p` with `(p + p^T) / 2`.
pub fn symmetrize(p: &mut DMatrix<f64>) {
    let n = p.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (p[(i, j)] + p[(j, i)]);
            p[(i, j)] = s;
            p[(j, i)] = s;
        }
    }
}

/// Computes `a * s^{-1}` for symmetric positive-definite `s` through its
/// Cholesky factor. Returns `None` when `s` is not positive definite.
pub fn solve_right_spd(a: &DMatrix<f64>, s: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = s.cholesky()?;
    // (a s^{-1})^T = s^{-1} a^T since s is symmetric.
    Some(chol.solve(&a.transpose()).transpose())
}

/// Selector matrix with a single one per row at the given columns.
pub fn selector(columns: &[usize], n: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(columns.len(), n);
    for (row, &col) in columns.iter().enumerate() {
        h[(row, col)] = 1.0;
    }
    h
}

pub fn diag_from(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn spd_solve_matches_inverse() {
        let s = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 0.0, 3.0]);
        let x = solve_right_spd(&a, s.clone()).unwrap();
        let y = &a * s.try_inverse().unwrap();
        assert_relative_eq!(x, y, epsilon = 1e-14);
    }

    #[test]
    fn indefinite_rejected() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(solve_right_spd(&DMatrix::identity(2, 2), s).is_none());
    }
}
