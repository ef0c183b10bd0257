//! The control Hamiltonian H(x, u, lambda+) = lambda+' f(x, u) + l(x, u), its
//! minimisation over u, and the nonlinear remainders F, G of the state/costate
//! recursion x+ = Ax - BR^{-1}B' lambda+ + F, lambda = Qx + A' lambda+ + G.

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{CutoffProfile, Problem};
use crate::tolerances::Tolerances;

#[derive(Debug, Clone)]
pub struct HamiltonianEval {
    pub value: f64,
    pub grad_u: Vector,
    pub grad_x: Vector,
    pub hess_uu: Mat,
    pub hess_xx: Mat,
    /// Mixed block d^2H / dx du, n x m.
    pub hess_xu: Mat,
    pub fx: Mat,
    pub fu: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BidirectionalPoint {
    pub x: Vector,
    pub lambda_plus: Vector,
}

impl BidirectionalPoint {
    pub fn new(x: Vector, lambda_plus: Vector) -> Self {
        Self { x, lambda_plus }
    }

    pub fn origin(n: usize) -> Self {
        Self::new(Vector::zeros(n), Vector::zeros(n))
    }
}

pub fn hamiltonian_eval(prob: &Problem, x: &[f64], u: &[f64], lambda_plus: &[f64]) -> Result<HamiltonianEval> {
    let (n, m) = (prob.n(), prob.m());
    if lambda_plus.len() != n {
        return Err(Error::Dimension(format!("lambda+ must have length {n}, got {}", lambda_plus.len())));
    }
    let dyn_eval = prob.eval_dynamics(x, u, true)?;
    let cost = prob.eval_cost(x, u)?;
    let lam = Vector::from_column_slice(lambda_plus);
    let value = lam.dot(&dyn_eval.value) + cost.value;
    let grad_x = dyn_eval.fx.transpose() * &lam + &cost.lx;
    let grad_u = dyn_eval.fu.transpose() * &lam + &cost.lu;
    let mut hess = cost.hessian;
    for (i, h) in dyn_eval.hessians.iter().enumerate() {
        hess += h * lam[i];
    }
    Ok(HamiltonianEval {
        value,
        grad_u,
        grad_x,
        hess_uu: hess.view((n, n), (m, m)).into_owned(),
        hess_xx: hess.view((0, 0), (n, n)).into_owned(),
        hess_xu: hess.view((0, n), (n, m)).into_owned(),
        fx: dyn_eval.fx,
        fu: dyn_eval.fu,
    })
}

/// Minimiser of H over u by Newton's method started at the linear-quadratic
/// optimum -R^{-1}(B' lambda+ + S'x).
pub fn optimal_control(prob: &Problem, pt: &BidirectionalPoint, tol: &Tolerances) -> Result<Vector> {
    Ok(optimal_control_eval(prob, pt, tol)?.0)
}

fn optimal_control_eval(
    prob: &Problem,
    pt: &BidirectionalPoint,
    tol: &Tolerances,
) -> Result<(Vector, HamiltonianEval)> {
    let non_convex =
        || Error::NonConvex { x: pt.x.as_slice().to_vec(), lambda_plus: pt.lambda_plus.as_slice().to_vec() };
    let r_chol = linalg::symmetrize(&prob.r).cholesky().ok_or_else(non_convex)?;
    let mut u = -r_chol.solve(&(prob.b.transpose() * &pt.lambda_plus + prob.s.transpose() * &pt.x));
    let scale = tol.newton_gradient * (1.0 + pt.lambda_plus.norm() + pt.x.norm());
    for _ in 0..=tol.newton_max_iterations {
        let h = hamiltonian_eval(prob, pt.x.as_slice(), u.as_slice(), pt.lambda_plus.as_slice())?;
        let chol = linalg::symmetrize(&h.hess_uu).cholesky().ok_or_else(non_convex)?;
        if h.grad_u.norm() <= scale {
            return Ok((u, h));
        }
        u -= chol.solve(&h.grad_u);
        if u.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    Err(Error::NoConvergence(format!(
        "control minimisation at x = {:?}, lambda+ = {:?}",
        pt.x.as_slice(),
        pt.lambda_plus.as_slice()
    )))
}

/// Values of the remainders together with the minimising control.
#[derive(Debug, Clone)]
pub struct RemainderEval {
    pub f: Vector,
    pub g: Vector,
    pub control: Vector,
}

/// Evaluator for F and G on a cross-term-free problem, with optional smooth
/// localisation of the (x, lambda+) arguments.
#[derive(Debug, Clone)]
pub struct Remainders {
    prob: Problem,
    /// B R^{-1} B'
    input_gain: Mat,
    localize: Option<(CutoffProfile, CutoffProfile)>,
    tol: Tolerances,
}

impl Remainders {
    pub fn new(prob: &Problem, tol: &Tolerances) -> Result<Self> {
        if prob.has_cross_term() {
            return Err(Error::InvalidProblem(
                "nonlinear remainders need S = 0; eliminate the cross term first".into(),
            ));
        }
        let r_inv = linalg::spd_inverse(&prob.r, "R")?;
        Ok(Self {
            input_gain: &prob.b * r_inv * prob.b.transpose(),
            prob: prob.clone(),
            localize: None,
            tol: tol.clone(),
        })
    }

    /// Localise the state argument with radius `x_radius` and the costate with `lambda_radius`.
    pub fn localized(mut self, x_radius: f64, lambda_radius: f64) -> Self {
        self.localize = Some((CutoffProfile::new(x_radius), CutoffProfile::new(lambda_radius)));
        self
    }

    pub fn problem(&self) -> &Problem {
        &self.prob
    }

    pub fn input_gain(&self) -> &Mat {
        &self.input_gain
    }

    pub fn eval(&self, x: &Vector, lambda_plus: &Vector) -> Result<RemainderEval> {
        let (x, lam) = match &self.localize {
            Some((cx, cl)) => (cx.apply(x), cl.apply(lambda_plus)),
            None => (x.clone(), lambda_plus.clone()),
        };
        let prob = &self.prob;
        let pt = BidirectionalPoint::new(x, lam);
        if prob.is_linear_quadratic() {
            let u = -linalg::spd_inverse(&prob.r, "R")? * prob.b.transpose() * &pt.lambda_plus;
            let n = prob.n();
            return Ok(RemainderEval { f: Vector::zeros(n), g: Vector::zeros(n), control: u });
        }
        let (u, h) = optimal_control_eval(prob, &pt, &self.tol)?;
        let fval = prob.dynamics(pt.x.as_slice(), u.as_slice())?;
        let f = fval - (&prob.a * &pt.x - &self.input_gain * &pt.lambda_plus);
        let g = h.grad_x - (&prob.q * &pt.x + prob.a.transpose() * &pt.lambda_plus);
        Ok(RemainderEval { f, g, control: u })
    }
}

/// F and G at a point, unlocalised.
pub fn nonlinear_remainders(prob: &Problem, pt: &BidirectionalPoint, tol: &Tolerances) -> Result<(Vector, Vector)> {
    let r = Remainders::new(prob, tol)?.eval(&pt.x, &pt.lambda_plus)?;
    Ok((r.f, r.g))
}

/// Max-norm violation of the bidirectional recursion by the quadruple (x, lambda, x+, lambda+).
pub fn bidirectional_residual(
    prob: &Problem,
    x: &Vector,
    lambda: &Vector,
    x_plus: &Vector,
    lambda_plus: &Vector,
    tol: &Tolerances,
) -> Result<f64> {
    let rem = Remainders::new(prob, tol)?;
    let r = rem.eval(x, lambda_plus)?;
    let state = x_plus - &prob.a * x + rem.input_gain() * lambda_plus - &r.f;
    let costate = lambda - &prob.q * x - prob.a.transpose() * lambda_plus - &r.g;
    Ok(state.amax().max(costate.amax()))
}

/// Second derivatives of the control-eliminated Hamiltonian H*(x, lambda+) = min_u H.
#[derive(Debug, Clone)]
pub struct ReducedHessian {
    /// d x+ / d x  (= H*_{lambda+ x})
    pub lambda_x: Mat,
    /// d x+ / d lambda+  (= H*_{lambda+ lambda+}, symmetric)
    pub lambda_lambda: Mat,
    /// d lambda / d x  (= H*_{xx}, symmetric)
    pub x_x: Mat,
}

pub fn reduced_hessian(prob: &Problem, pt: &BidirectionalPoint, tol: &Tolerances) -> Result<ReducedHessian> {
    let (_, h) = optimal_control_eval(prob, pt, tol)?;
    let chol = linalg::symmetrize(&h.hess_uu).cholesky().ok_or_else(|| Error::NonConvex {
        x: pt.x.as_slice().to_vec(),
        lambda_plus: pt.lambda_plus.as_slice().to_vec(),
    })?;
    let hux = h.hess_xu.transpose();
    let du_dx = -chol.solve(&hux);
    let du_dl = -chol.solve(&h.fu.transpose());
    Ok(ReducedHessian {
        lambda_x: &h.fx + &h.fu * &du_dx,
        lambda_lambda: linalg::symmetrize(&(&h.fu * du_dl)),
        x_x: linalg::symmetrize(&(&h.hess_xx + &h.hess_xu * du_dx)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MonomialTerm, PolyMap};

    fn p2() -> Problem {
        let f = PolyMap::new(1, 1, vec![vec![MonomialTerm::new(0.1, vec![2], vec![0])]]).unwrap();
        Problem::scalar(0.5, 1.0, 1.0, 1.0).unwrap().with_nonlinearities(f, PolyMap::zero(1, 1, 1)).unwrap()
    }

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn origin_hamiltonian_vanishes() {
        let p = Problem::scalar(0.5, 1.0, 1.0, 1.0).unwrap();
        let h = hamiltonian_eval(&p, &[0.0], &[0.0], &[0.0]).unwrap();
        assert_eq!(h.value, 0.0);
        assert_eq!(h.grad_u[0], 0.0);
    }

    #[test]
    fn lq_control_gradient_formula() {
        let mut p = Problem::scalar(0.5, 2.0, 1.0, 3.0).unwrap();
        p.s = Mat::from_element(1, 1, 0.4);
        let h = hamiltonian_eval(&p, &[0.7], &[-0.2], &[1.3]).unwrap();
        let expected = 2.0 * 1.3 + 0.4 * 0.7 + 3.0 * -0.2;
        assert!((h.grad_u[0] - expected).abs() < 1e-15);
        assert_eq!(h.hess_uu[(0, 0)], 3.0);
    }

    #[test]
    fn p2_state_gradient() {
        let h = hamiltonian_eval(&p2(), &[1.0], &[0.0], &[1.0]).unwrap();
        assert!((h.grad_x[0] - 1.7).abs() < 1e-15);
    }

    #[test]
    fn lq_control_is_closed_form() {
        let mut p = Problem::scalar(0.5, 2.0, 1.0, 3.0).unwrap();
        p.s = Mat::from_element(1, 1, 0.4);
        let pt = BidirectionalPoint::new(v(&[0.7]), v(&[1.3]));
        let u = optimal_control(&p, &pt, &Tolerances::default()).unwrap();
        assert!((u[0] + (2.0 * 1.3 + 0.4 * 0.7) / 3.0).abs() < 1e-15);
        let u0 = optimal_control(&p, &BidirectionalPoint::origin(1), &Tolerances::default()).unwrap();
        assert_eq!(u0[0], 0.0);
    }

    #[test]
    fn non_convex_control_detected() {
        // l = u^2/2 - u^4, concave in u away from 0
        let l = PolyMap::new(1, 1, vec![vec![MonomialTerm::new(-1.0, vec![0], vec![4])]]).unwrap();
        let p = Problem::scalar(0.5, 1.0, 1.0, 1.0).unwrap().with_nonlinearities(PolyMap::zero(1, 1, 1), l).unwrap();
        let pt = BidirectionalPoint::new(v(&[0.0]), v(&[-2.0]));
        assert!(matches!(optimal_control(&p, &pt, &Tolerances::default()), Err(Error::NonConvex { .. })));
    }

    #[test]
    fn remainders_lq_vanish_and_p2_value() {
        let tol = Tolerances::default();
        let lq = Problem::scalar(0.5, 1.0, 1.0, 1.0).unwrap();
        let (f, g) = nonlinear_remainders(&lq, &BidirectionalPoint::new(v(&[0.3]), v(&[-0.2])), &tol).unwrap();
        assert_eq!((f[0], g[0]), (0.0, 0.0));
        let (f, g) = nonlinear_remainders(&p2(), &BidirectionalPoint::new(v(&[0.2]), v(&[0.0])), &tol).unwrap();
        assert!((f[0] - 0.004).abs() < 1e-15);
        assert_eq!(g[0], 0.0);
        let (f, g) = nonlinear_remainders(&p2(), &BidirectionalPoint::origin(1), &tol).unwrap();
        assert_eq!((f[0], g[0]), (0.0, 0.0));
    }

    #[test]
    fn remainders_require_no_cross_term() {
        let mut p = Problem::scalar(0.5, 1.0, 1.0, 1.0).unwrap();
        p.s = Mat::from_element(1, 1, 0.1);
        assert!(Remainders::new(&p, &Tolerances::default()).is_err());
    }

    #[test]
    fn residual_zero_at_origin_positive_off_manifold() {
        let tol = Tolerances::default();
        let z = v(&[0.0]);
        assert_eq!(bidirectional_residual(&p2(), &z, &z, &z, &z, &tol).unwrap(), 0.0);
        let r = bidirectional_residual(&p2(), &v(&[0.1]), &v(&[0.3]), &v(&[-0.2]), &v(&[0.05]), &tol).unwrap();
        assert!(r > 0.0);
    }
}
