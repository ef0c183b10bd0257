//! Stabilising solution of the discrete-time algebraic Riccati equation
//!
//!   P = A'PA - (A'PB + S)(B'PB + R)^{-1}(A'PB + S)' + Q,
//!
//! the associated feedback gain, and the closed-loop Lyapunov certificate.

use nalgebra::Complex;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::Problem;
use crate::tolerances::Tolerances;

#[derive(Debug, Clone)]
pub struct StabilizingSolution {
    pub p: Mat,
    pub k: Mat,
    pub closed_loop_spectrum: Vec<Complex<f64>>,
    /// Spectral radius of A + BK.
    pub alpha: f64,
    /// Solution of (A+BK)' M (A+BK) - M = -I.
    pub lyapunov_m: Mat,
    pub iterations: usize,
    /// Max-norm Riccati residual of `p`.
    pub residual: f64,
}

impl StabilizingSolution {
    pub fn closed_loop(&self, prob: &Problem) -> Mat {
        &prob.a + &prob.b * &self.k
    }
}

fn riccati_map(prob: &Problem, p: &Mat) -> Result<Mat> {
    let (a, b) = (&prob.a, &prob.b);
    let coupling = a.transpose() * p * b + &prob.s;
    let inner = linalg::spd_inverse(&(b.transpose() * p * b + &prob.r), "B'PB + R")?;
    Ok(linalg::symmetrize(&(a.transpose() * p * a - &coupling * inner * coupling.transpose() + &prob.q)))
}

/// Max-norm residual of the Riccati equation at `p`.
pub fn dtare_residual(prob: &Problem, p: &Mat) -> Result<f64> {
    Ok(linalg::max_abs(&(p - riccati_map(prob, p)?)))
}

/// K = -(B'PB + R)^{-1}(B'PA + S').
pub fn feedback_gain(prob: &Problem, p: &Mat) -> Result<Mat> {
    let b = &prob.b;
    let inner = linalg::spd_inverse(&(b.transpose() * p * b + &prob.r), "B'PB + R")?;
    Ok(-(inner * (b.transpose() * p * &prob.a + prob.s.transpose())))
}

/// Riccati difference recursion from P0 = Q followed by one Newton
/// (Lyapunov) refinement of the limit.
pub fn solve_dtare(prob: &Problem, tol: &Tolerances) -> Result<StabilizingSolution> {
    let mut p = linalg::symmetrize(&prob.q);
    let mut iterations = 0;
    loop {
        if iterations >= tol.dtare_max_iterations {
            return Err(Error::NoConvergence(format!(
                "Riccati recursion did not settle in {} iterations",
                tol.dtare_max_iterations
            )));
        }
        let next = riccati_map(prob, &p)?;
        iterations += 1;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NoConvergence("Riccati recursion diverged".into()));
        }
        let step = linalg::max_abs(&(&next - &p));
        let scale = 1.0 + linalg::max_abs(&p);
        p = next;
        if step <= tol.dtare_step * scale {
            break;
        }
    }

    // Newton refinement: P solves the Stein equation of the current closed loop.
    let k = feedback_gain(prob, &p)?;
    let acl = &prob.a + &prob.b * &k;
    let stage = &prob.q + &prob.s * &k + k.transpose() * prob.s.transpose() + k.transpose() * &prob.r * &k;
    if linalg::spectral_radius(&acl) < 1.0 {
        let refined = linalg::symmetrize(&linalg::solve_stein(&acl, &stage)?);
        if dtare_residual(prob, &refined)? <= dtare_residual(prob, &p)? {
            p = refined;
        }
    }

    let k = feedback_gain(prob, &p)?;
    let acl = &prob.a + &prob.b * &k;
    let closed_loop_spectrum = linalg::eigenvalues(&acl);
    let alpha = closed_loop_spectrum.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()));
    if alpha >= 1.0 - tol.closed_loop_margin {
        return Err(Error::NotHyperbolic(format!("closed-loop spectral radius {alpha} is not below 1")));
    }
    let lyapunov_m = lyapunov_check(&acl, tol)?;
    let residual = dtare_residual(prob, &p)?;
    Ok(StabilizingSolution { p, k, closed_loop_spectrum, alpha, lyapunov_m, iterations, residual })
}

/// M = sum_k (Acl')^k Acl^k, the solution of Acl' M Acl - M = -I, accumulated
/// by repeated squaring of the partial sums.
pub fn lyapunov_check(acl: &Mat, tol: &Tolerances) -> Result<Mat> {
    let rho = linalg::spectral_radius(acl);
    if rho >= 1.0 {
        return Err(Error::NotHyperbolic(format!("spectral radius {rho} >= 1")));
    }
    let n = acl.nrows();
    let identity = Mat::identity(n, n);
    let mut m = identity.clone();
    let mut power = acl.clone();
    for _ in 0..64 {
        let residual = linalg::max_abs(&(acl.transpose() * &m * acl - &m + &identity));
        if residual <= tol.lyapunov_residual * (1.0 + linalg::max_abs(&m)) {
            return Ok(linalg::symmetrize(&m));
        }
        m = &m + power.transpose() * &m * &power;
        power = &power * &power;
    }
    Err(Error::NoConvergence("Lyapunov series did not converge".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const P1: f64 = 1.132_782_218_537_318_6;

    #[test]
    fn scalar_stable_plant() {
        let sol = solve_dtare(&Problem::scalar(0.5, 1.0, 1.0, 1.0).unwrap(), &Tolerances::default()).unwrap();
        assert!((sol.p[(0, 0)] - P1).abs() < 1e-12);
        assert!((sol.k[(0, 0)] + 0.265_564_437).abs() < 1e-8);
        assert!((sol.alpha - 0.234_435_563).abs() < 1e-8);
    }

    #[test]
    fn zero_state_cost_gives_zero() {
        let sol = solve_dtare(&Problem::scalar(0.5, 1.0, 0.0, 1.0).unwrap(), &Tolerances::default()).unwrap();
        assert_eq!(sol.p[(0, 0)], 0.0);
        assert_eq!(sol.k[(0, 0)], 0.0);
    }

    #[test]
    fn singular_a_is_deadbeat() {
        let sol = solve_dtare(&Problem::scalar(0.0, 1.0, 1.0, 1.0).unwrap(), &Tolerances::default()).unwrap();
        assert_eq!(sol.p[(0, 0)], 1.0);
        assert_eq!(sol.k[(0, 0)], 0.0);
        assert_eq!(sol.alpha, 0.0);
    }

    #[test]
    fn zero_gain_for_zero_p() {
        let prob = Problem::scalar(0.5, 1.0, 0.0, 1.0).unwrap();
        assert_eq!(feedback_gain(&prob, &Mat::zeros(1, 1)).unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn lyapunov_examples() {
        let tol = Tolerances::default();
        assert_eq!(lyapunov_check(&Mat::zeros(2, 2), &tol).unwrap(), Mat::identity(2, 2));
        let m = lyapunov_check(&Mat::from_element(1, 1, 0.234_435_563), &tol).unwrap();
        assert!((m[(0, 0)] - 1.0 / (1.0 - 0.234_435_563f64.powi(2))).abs() < 1e-12);
        let jordan = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let m = lyapunov_check(&jordan, &tol).unwrap();
        assert_eq!(m, Mat::identity(2, 2) + jordan.transpose() * &jordan);
        assert!(lyapunov_check(&Mat::from_element(1, 1, 1.0), &tol).is_err());
    }

    #[test]
    fn unstabilizable_rejected() {
        assert!(solve_dtare(&Problem::scalar(2.0, 0.0, 1.0, 1.0).unwrap(), &Tolerances::default()).is_err());
    }
}
