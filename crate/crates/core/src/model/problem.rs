use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::poly::PolyMap;

/// Largest state or control dimension accepted anywhere.
pub const MAX_DIM: usize = 8;

/// Infinite-horizon problem: minimise the sum of l(x_k, u_k) subject to x_{k+1} = f(x_k, u_k), with
/// f(x,u) = Ax + Bu + f_nl(x,u) and l(x,u) = x'Qx/2 + x'Su + u'Ru/2 + l_nl(x,u).
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub a: Mat,
    pub b: Mat,
    pub q: Mat,
    pub r: Mat,
    pub s: Mat,
    pub f_nl: PolyMap,
    pub l_nl: PolyMap,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct DynamicsEval {
    pub value: Vector,
    pub fx: Mat,
    pub fu: Mat,
    /// Per-component Hessians over (x, u); only the nonlinear part contributes.
    pub hessians: Vec<Mat>,
}

#[derive(Debug, Clone)]
pub struct CostEval {
    pub value: f64,
    pub lx: Vector,
    pub lu: Vector,
    pub hessian: Mat,
}

impl Problem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(a: Mat, b: Mat, q: Mat, r: Mat, s: Mat, f_nl: PolyMap, l_nl: PolyMap, epsilon: f64) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        let shape = |name: &str, mat: &Mat, rows: usize, cols: usize| -> Result<()> {
            if mat.nrows() != rows || mat.ncols() != cols {
                return Err(Error::Dimension(format!(
                    "{name} must be {rows}x{cols}, got {}x{}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidProblem(format!("{name} has non-finite entries")));
            }
            Ok(())
        };
        if n == 0 || m == 0 {
            return Err(Error::Dimension("state and control dimensions must be positive".into()));
        }
        if n > MAX_DIM || m > MAX_DIM {
            return Err(Error::Dimension(format!("n = {n}, m = {m} exceeds the limit of {MAX_DIM}")));
        }
        shape("A", &a, n, n)?;
        shape("B", &b, n, m)?;
        shape("Q", &q, n, n)?;
        shape("R", &r, m, m)?;
        shape("S", &s, n, m)?;
        if f_nl.n_x() != n || f_nl.n_u() != m || f_nl.n_out() != n {
            return Err(Error::Dimension("f nonlinearity must map (x, u) to R^n".into()));
        }
        if l_nl.n_x() != n || l_nl.n_u() != m || l_nl.n_out() != 1 {
            return Err(Error::Dimension("l nonlinearity must map (x, u) to R".into()));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidProblem(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { a, b, q, r, s, f_nl, l_nl, epsilon })
    }

    /// Linear-quadratic problem with S = 0 and epsilon = 0.1.
    pub fn lq(a: Mat, b: Mat, q: Mat, r: Mat) -> Result<Self> {
        let (n, m) = (a.nrows(), b.ncols());
        Self::new(a, b, q, r, Mat::zeros(n, m), PolyMap::zero(n, m, n), PolyMap::zero(n, m, 1), 0.1)
    }

    /// Scalar problem f = a x + b u + f_nl, l = (q x^2 + r u^2)/2.
    pub fn scalar(a: f64, b: f64, q: f64, r: f64) -> Result<Self> {
        let e = |v| Mat::from_element(1, 1, v);
        Self::lq(e(a), e(b), e(q), e(r))
    }

    pub fn with_nonlinearities(mut self, f_nl: PolyMap, l_nl: PolyMap) -> Result<Self> {
        self.f_nl = f_nl;
        self.l_nl = l_nl;
        Self::new(self.a, self.b, self.q, self.r, self.s, self.f_nl, self.l_nl, self.epsilon)
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidProblem(format!("epsilon must be positive, got {epsilon}")));
        }
        self.epsilon = epsilon;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn has_cross_term(&self) -> bool {
        self.s.iter().any(|v| *v != 0.0)
    }

    pub fn is_linear_quadratic(&self) -> bool {
        self.f_nl.is_zero() && self.l_nl.is_zero()
    }

    /// The quadratic cost weight [[Q, S], [S', R]].
    pub fn cost_block(&self) -> Mat {
        let (n, m) = (self.n(), self.m());
        let mut block = Mat::zeros(n + m, n + m);
        block.view_mut((0, 0), (n, n)).copy_from(&self.q);
        block.view_mut((0, n), (n, m)).copy_from(&self.s);
        block.view_mut((n, 0), (m, n)).copy_from(&self.s.transpose());
        block.view_mut((n, n), (m, m)).copy_from(&self.r);
        block
    }

    fn check_point(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.n() || u.len() != self.m() {
            return Err(Error::Dimension(format!(
                "expected x in R^{} and u in R^{}, got lengths {} and {}",
                self.n(),
                self.m(),
                x.len(),
                u.len()
            )));
        }
        Ok(())
    }

    pub fn dynamics(&self, x: &[f64], u: &[f64]) -> Result<Vector> {
        self.check_point(x, u)?;
        let xv = Vector::from_column_slice(x);
        let uv = Vector::from_column_slice(u);
        let nl = self.f_nl.eval(x, u)?;
        Ok(&self.a * xv + &self.b * uv + Vector::from_vec(nl))
    }

    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> Result<f64> {
        self.check_point(x, u)?;
        let xv = Vector::from_column_slice(x);
        let uv = Vector::from_column_slice(u);
        let quad = 0.5 * xv.dot(&(&self.q * &xv)) + xv.dot(&(&self.s * &uv)) + 0.5 * uv.dot(&(&self.r * &uv));
        Ok(quad + self.l_nl.eval(x, u)?[0])
    }

    pub fn eval_dynamics(&self, x: &[f64], u: &[f64], second_order: bool) -> Result<DynamicsEval> {
        self.check_point(x, u)?;
        let (n, m) = (self.n(), self.m());
        let nl = self.f_nl.eval_derivatives(x, u, second_order)?;
        let xv = Vector::from_column_slice(x);
        let uv = Vector::from_column_slice(u);
        let value = &self.a * xv + &self.b * uv + Vector::from_vec(nl.value);
        let fx = &self.a + nl.jacobian.columns(0, n);
        let fu = &self.b + nl.jacobian.columns(n, m);
        Ok(DynamicsEval { value, fx, fu, hessians: nl.hessians })
    }

    /// Stage cost with gradient and the full (x, u) Hessian.
    pub fn eval_cost(&self, x: &[f64], u: &[f64]) -> Result<CostEval> {
        self.check_point(x, u)?;
        let (n, m) = (self.n(), self.m());
        let nl = self.l_nl.eval_derivatives(x, u, true)?;
        let xv = Vector::from_column_slice(x);
        let uv = Vector::from_column_slice(u);
        let value =
            0.5 * xv.dot(&(&self.q * &xv)) + xv.dot(&(&self.s * &uv)) + 0.5 * uv.dot(&(&self.r * &uv)) + nl.value[0];
        let grad = nl.jacobian.row(0).transpose();
        let lx = &self.q * &xv + &self.s * &uv + grad.rows(0, n);
        let lu = self.s.transpose() * &xv + &self.r * &uv + grad.rows(n, m);
        let mut hessian = nl.hessians.into_iter().next().unwrap_or_else(|| Mat::zeros(n + m, n + m));
        hessian += self.cost_block();
        Ok(CostEval { value, lx, lu, hessian })
    }
}

/// Equivalent problem without the state/control cross term, obtained through
/// the control change u = v - R^{-1}S'x.
pub fn eliminate_cross_term(prob: &Problem) -> Result<Problem> {
    if !prob.has_cross_term() {
        return Ok(prob.clone());
    }
    let r_inv = linalg::inverse(&prob.r, "R is not invertible")?;
    let shift = -(&r_inv * prob.s.transpose());
    let a = &prob.a + &prob.b * &shift;
    let q = linalg::symmetrize(&(&prob.q - &prob.s * &r_inv * prob.s.transpose()));
    let f_nl = prob.f_nl.substitute_control(&shift)?;
    let l_nl = prob.l_nl.substitute_control(&shift)?;
    let (n, m) = (prob.n(), prob.m());
    Problem::new(a, prob.b.clone(), q, prob.r.clone(), Mat::zeros(n, m), f_nl, l_nl, prob.epsilon)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum ValidationFailure {
    QNotSymmetric { asymmetry: f64 },
    RNotSymmetric { asymmetry: f64 },
    RNotPositiveDefinite { min_eigenvalue: f64 },
    CostNotConvex { min_eigenvalue: f64 },
    NotStabilizable { eigenvalue: [f64; 2] },
    NotDetectable { eigenvalue: [f64; 2] },
}

impl ValidationFailure {
    pub fn invariant(&self) -> &'static str {
        match self {
            Self::QNotSymmetric { .. } => "Q symmetric",
            Self::RNotSymmetric { .. } => "R symmetric",
            Self::RNotPositiveDefinite { .. } => "R positive definite",
            Self::CostNotConvex { .. } => "[[Q,S],[S',R]] positive semidefinite",
            Self::NotStabilizable { .. } => "(A,B) stabilizable",
            Self::NotDetectable { .. } => "(A,Q^(1/2)) detectable",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// Failures of the invariants a parsed problem must satisfy before any stage runs.
    pub fn structural_failures(&self) -> impl Iterator<Item = &ValidationFailure> {
        self.failures.iter().filter(|f| {
            !matches!(f, ValidationFailure::NotStabilizable { .. } | ValidationFailure::NotDetectable { .. })
        })
    }
}

/// Checks the standing assumptions on a problem and lists every violation.
pub fn validate_problem(prob: &Problem, rank_tol: f64) -> ValidationReport {
    let mut failures = Vec::new();
    let scale = |m: &Mat| 1e-12 * (1.0 + linalg::max_abs(m));

    let q_asym = linalg::asymmetry(&prob.q);
    if q_asym > scale(&prob.q) {
        failures.push(ValidationFailure::QNotSymmetric { asymmetry: q_asym });
    }
    let r_asym = linalg::asymmetry(&prob.r);
    if r_asym > scale(&prob.r) {
        failures.push(ValidationFailure::RNotSymmetric { asymmetry: r_asym });
    }
    let r_min = linalg::min_symmetric_eigenvalue(&prob.r);
    let r_pd = r_min > scale(&prob.r);
    if !r_pd {
        failures.push(ValidationFailure::RNotPositiveDefinite { min_eigenvalue: r_min });
    }
    let (n, m) = (prob.n(), prob.m());
    let block = prob.cost_block();
    let block_min = linalg::min_symmetric_eigenvalue(&block);
    if block_min < -scale(&block) {
        failures.push(ValidationFailure::CostNotConvex { min_eigenvalue: block_min });
    }

    // Detectability is judged on the cross-term-free form when it exists.
    let (a, q) = match r_pd.then(|| eliminate_cross_term(prob)).and_then(|r| r.ok()) {
        Some(p) => (p.a, p.q),
        None => (prob.a.clone(), prob.q.clone()),
    };
    for mu in linalg::eigenvalues(&prob.a) {
        if mu.norm() < 1.0 - 1e-10 {
            continue;
        }
        let shifted = linalg::to_complex(&prob.a).map(|v| -v) + linalg::CMat::identity(n, n) * mu;
        let mut ctrl = linalg::CMat::zeros(n, n + m);
        ctrl.view_mut((0, 0), (n, n)).copy_from(&shifted);
        ctrl.view_mut((0, n), (n, m)).copy_from(&linalg::to_complex(&prob.b));
        if linalg::complex_rank(&ctrl, rank_tol) < n {
            failures.push(ValidationFailure::NotStabilizable { eigenvalue: [mu.re, mu.im] });
        }
    }
    for mu in linalg::eigenvalues(&a) {
        if mu.norm() < 1.0 - 1e-10 {
            continue;
        }
        let shifted = linalg::to_complex(&a).map(|v| -v) + linalg::CMat::identity(n, n) * mu;
        let mut obs = linalg::CMat::zeros(2 * n, n);
        obs.view_mut((0, 0), (n, n)).copy_from(&shifted);
        obs.view_mut((n, 0), (n, n)).copy_from(&linalg::to_complex(&q));
        if linalg::complex_rank(&obs, rank_tol) < n {
            failures.push(ValidationFailure::NotDetectable { eigenvalue: [mu.re, mu.im] });
        }
    }
    ValidationReport { failures }
}
