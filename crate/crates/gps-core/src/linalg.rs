//! Small dense linear-algebra helpers built on symmetric eigendecompositions.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Relative eigenvalue floor used when forming matrix powers of symmetric
/// positive semidefinite matrices.
pub const EIG_FLOOR_REL: f64 = 1e-12;

/// Force exact symmetry: `(A + A') / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    0.5 * (a + a.transpose())
}

fn sym_power(a: &DMatrix<f64>, pow: f64, floor_rel: f64) -> Result<DMatrix<f64>> {
    let sym = symmetrize(a);
    let eig = sym.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if max_ev <= 0.0 {
        return Err(Error::Singular(
            "matrix has no positive eigenvalues".to_string(),
        ));
    }
    let floor = floor_rel * max_ev;
    if pow < 0.0 {
        // Inverse powers are only defined when the matrix is honestly
        // invertible at the working tolerance.
        let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_ev < floor {
            return Err(Error::Singular(format!(
                "matrix numerically singular: min eigenvalue {min_ev:.3e} < {floor:.3e}"
            )));
        }
    }
    let mut d = DVector::zeros(eig.eigenvalues.len());
    for (i, ev) in eig.eigenvalues.iter().enumerate() {
        let ev = ev.max(floor);
        d[i] = ev.powf(pow);
    }
    let v = &eig.eigenvectors;
    let scaled = v * DMatrix::from_diagonal(&d);
    Ok(scaled * v.transpose())
}

/// Symmetric square root via eigendecomposition with a relative eigenvalue floor.
pub fn sym_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_power(a, 0.5, EIG_FLOOR_REL)
}

/// Symmetric inverse square root; errors when the matrix is numerically singular.
pub fn sym_inv_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_power(a, -0.5, EIG_FLOOR_REL)
}

/// Symmetric inverse; errors when the matrix is numerically singular.
pub fn sym_inv(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    sym_power(a, -1.0, EIG_FLOOR_REL)
}

/// Solve `A x = b` for symmetric positive definite `A`, Cholesky first and
/// eigendecomposition as fallback.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let sym = symmetrize(a);
    if let Some(chol) = sym.clone().cholesky() {
        return Ok(chol.solve(b));
    }
    let inv = sym_inv(&sym)?;
    Ok(&inv * b)
}

/// 2-norm condition number of a symmetric PSD matrix.
pub fn spd_condition_number(a: &DMatrix<f64>) -> f64 {
    let eig = symmetrize(a).symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_ev <= 0.0 {
        f64::INFINITY
    } else {
        max_ev / min_ev
    }
}

/// Clip negative eigenvalues of a symmetric matrix to zero.
pub fn clip_psd(a: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let sym = symmetrize(a);
    let eig = sym.clone().symmetric_eigen();
    let min_ev = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_ev >= 0.0 {
        return (sym, false);
    }
    let d = eig.eigenvalues.map(|ev| ev.max(0.0));
    let v = &eig.eigenvectors;
    let clipped = v * DMatrix::from_diagonal(&d) * v.transpose();
    (symmetrize(&clipped), true)
}

/// Numerical rank from singular values: count of `s > tol * s_max`.
pub fn numerical_rank(a: &DMatrix<f64>, tol_rel: f64) -> usize {
    let svd = a.clone().svd(false, false);
    let smax = svd
        .singular_values
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > tol_rel * smax)
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sqrt_roundtrip() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let s = sym_sqrt(&a).unwrap();
        let back = &s * &s;
        assert_relative_eq!(back, a, epsilon = 1e-10);
    }

    #[test]
    fn inv_sqrt_inverts() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let is = sym_inv_sqrt(&a).unwrap();
        assert_relative_eq!(is[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(is[(1, 1)], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn singular_inverse_rejected() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(sym_inv(&a).is_err());
    }

    #[test]
    fn clip_psd_flags_negative() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (c, clipped) = clip_psd(&a);
        assert!(clipped);
        let eig = c.symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&ev| ev >= -1e-12));
    }

    #[test]
    fn rank_detects_deficiency() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, -1.0, 2.0, 0.0, -2.0]);
        assert_eq!(numerical_rank(&a, 1e-10), 1);
    }
}
