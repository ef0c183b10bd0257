//! Small dense helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;
pub type CMat = DMatrix<Complex<f64>>;
pub type CVector = DVector<Complex<f64>>;

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn asymmetry(m: &Mat) -> f64 {
    max_abs(&(m - m.transpose()))
}

pub fn spectral_norm(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &Mat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    symmetrize(m).symmetric_eigenvalues().min()
}

pub fn eigenvalues(m: &Mat) -> Vec<Complex<f64>> {
    if m.is_empty() {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(m: &Mat) -> f64 {
    eigenvalues(m).iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn to_complex(m: &Mat) -> CMat {
    m.map(|v| Complex::new(v, 0.0))
}

/// Numerical rank with singular values below `rel_tol * sigma_max` treated as zero.
pub fn complex_rank(m: &CMat, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rel_tol * top).count()
}

/// Inverse of a symmetric positive definite matrix, failing if it is not.
pub fn spd_inverse(m: &Mat, what: &str) -> Result<Mat> {
    let chol = symmetrize(m).cholesky().ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))?;
    Ok(chol.inverse())
}

pub fn inverse(m: &Mat, what: &str) -> Result<Mat> {
    m.clone()
        .try_inverse()
        .filter(|inv| inv.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular(what.to_string()))
}

/// Solves the Stein equation X = A' X A + C through its Kronecker form.
pub fn solve_stein(a: &Mat, c: &Mat) -> Result<Mat> {
    let n = a.nrows();
    let at = a.transpose();
    // vec(A' X A) = (A' kron A') vec(X) with column-major vec.
    let kron = at.kronecker(&at);
    let system = Mat::identity(n * n, n * n) - kron;
    let rhs = Vector::from_column_slice(c.as_slice());
    let sol = system.lu().solve(&rhs).ok_or_else(|| Error::Singular("Stein equation operator".into()))?;
    Ok(Mat::from_column_slice(n, n, sol.as_slice()))
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stein_scalar_matches_geometric_series() {
        let a = Mat::from_element(1, 1, 0.5);
        let c = Mat::from_element(1, 1, 1.0);
        let x = solve_stein(&a, &c).unwrap();
        assert!((x[(0, 0)] - 1.0 / 0.75).abs() < 1e-14);
    }

    #[test]
    fn stein_residual_nonsymmetric() {
        let a = Mat::from_row_slice(2, 2, &[0.3, 0.4, -0.1, 0.2]);
        let c = Mat::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let x = solve_stein(&a, &c).unwrap();
        let res = &x - a.transpose() * &x * &a - &c;
        assert!(max_abs(&res) < 1e-14);
    }

    #[test]
    fn rank_detects_deficiency() {
        let m = to_complex(&Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]));
        assert_eq!(complex_rank(&m, 1e-10), 1);
    }
}
