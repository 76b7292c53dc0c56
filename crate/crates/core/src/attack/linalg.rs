//! Determinants and the two linear-system routes used for coefficient
//! recovery: Cramer's rule and a general-purpose LU solve.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest `|det|` accepted before a system is declared singular.
pub const SINGULAR_DET: f64 = 1e-12;

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(matrix: &[Vec<f64>]) -> f64 {
    let n = matrix.len();
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[pivot][col] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            a.swap(pivot, col);
            det = -det;
        }
        let p = a[col][col];
        det *= p;
        for row in col + 1..n {
            let factor = a[row][col] / p;
            if factor != 0.0 {
                for k in col..n {
                    a[row][k] -= factor * a[col][k];
                }
            }
        }
    }
    det
}

/// Solves `A x = z` by Cramer's rule: `x_k = det(A_k)/det(A)` where `A_k`
/// has column `k` replaced by `z`.
pub fn cramer_solve(a: &[Vec<f64>], z: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    if z.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: z.len() });
    }
    if let Some(row) = a.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, got: row.len() });
    }
    let det = determinant(a);
    if det.abs() < SINGULAR_DET || !det.is_finite() {
        return Err(Error::Singular { det });
    }
    Ok((0..n)
        .map(|k| {
            let replaced: Vec<Vec<f64>> = a
                .iter()
                .zip(z)
                .map(|(row, &zi)| {
                    let mut r = row.clone();
                    r[k] = zi;
                    r
                })
                .collect();
            determinant(&replaced) / det
        })
        .collect())
}

/// Direct LU solve of `A x = z`, the independent cross-check for
/// [`cramer_solve`].
pub fn direct_solve(a: &[Vec<f64>], z: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    if z.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: z.len() });
    }
    let m = DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let rhs = DVector::from_column_slice(z);
    m.lu()
        .solve(&rhs)
        .map(|x| x.iter().copied().collect())
        .ok_or(Error::Singular { det: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_determinants() {
        assert_eq!(determinant(&[vec![2.0]]), 2.0);
        assert_eq!(determinant(&[vec![1.0, 2.0], vec![3.0, 4.0]]), -2.0);
        let id3 = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(determinant(&id3), 1.0);
        assert_eq!(determinant(&[vec![1.0, 2.0], vec![2.0, 4.0]]), 0.0);
    }

    #[test]
    fn determinant_agrees_with_nalgebra() {
        let a = vec![
            vec![0.3, -1.2, 0.5, 2.0],
            vec![1.1, 0.4, -0.7, 0.2],
            vec![-0.5, 0.9, 1.3, -1.0],
            vec![0.8, 0.1, 0.0, 0.6],
        ];
        let m = DMatrix::from_fn(4, 4, |i, j| a[i][j]);
        assert!((determinant(&a) - m.determinant()).abs() < 1e-12);
    }

    #[test]
    fn cramer_two_point_line() {
        // points (0 -> 3), (1 -> 5) with a ones column
        let x = cramer_solve(&[vec![0.0, 1.0], vec![1.0, 1.0]], &[3.0, 5.0]).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-15 && (x[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn singular_system_is_rejected() {
        let err = cramer_solve(&[vec![1.0, 1.0], vec![1.0, 1.0]], &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }
}
