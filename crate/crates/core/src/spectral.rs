//! Eigenstructure of the linearised bidirectional dynamics and the symplectic
//! two-form it preserves.
//!
//! A pencil eigenvalue mu with eigenvector (dx, dl) satisfies
//!
//!   [[A, -BR^{-1}B'], [Q, A']] (dx, mu dl) = (mu dx, dl).
//!
//! Splitting the mu-dependence gives the generalised problem L v = mu M v with
//!
//!   L = [[A, 0], [Q, -I]],   M = [[I, BR^{-1}B'], [0, -A']],
//!
//! since the first block row reads A dx = mu (dx + BR^{-1}B' dl) and the second
//! Q dx - dl = -mu A' dl. A zero eigenvalue of A makes L and M singular
//! together, producing the pair {0, infinity}.

use nalgebra::Complex;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, CVector, Mat, Vector};
use crate::model::Problem;
use crate::pmp::{reduced_hessian, BidirectionalPoint, ReducedHessian};
use crate::tolerances::Tolerances;

const SHIFTS: [f64; 6] = [1.0, -1.0, 0.5, 2.0, -0.5, -2.0];
const REFINE_STEPS: usize = 3;
const CLUSTER_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenKind {
    Finite,
    Zero,
    Infinite,
}

#[derive(Debug, Clone)]
pub struct PencilEigen {
    pub kind: EigenKind,
    /// Eigenvalue; infinite entries carry `f64::INFINITY` in the real part.
    pub mu: Complex<f64>,
    /// Homogeneous pair with mu = alpha / beta, normalised to unit length.
    pub alpha: Complex<f64>,
    pub beta: Complex<f64>,
    /// Stacked (dx, dl); empty for spectra built from bare values.
    pub vector: CVector,
}

#[derive(Debug, Clone)]
pub struct PencilSpectrum {
    pub eigenvalues: Vec<PencilEigen>,
    pub zero_count: usize,
    pub infinite_count: usize,
    pub l: Mat,
    pub m: Mat,
}

impl PencilSpectrum {
    /// Spectrum from bare eigenvalues, without vectors or pencil matrices.
    pub fn from_values(finite: &[Complex<f64>], zero_count: usize, infinite_count: usize) -> Self {
        let mut eigenvalues: Vec<PencilEigen> = finite
            .iter()
            .map(|&mu| PencilEigen {
                kind: EigenKind::Finite,
                mu,
                alpha: mu / (1.0 + mu.norm_sqr()).sqrt(),
                beta: Complex::new(1.0 / (1.0 + mu.norm_sqr()).sqrt(), 0.0),
                vector: CVector::zeros(0),
            })
            .collect();
        let zero = PencilEigen {
            kind: EigenKind::Zero,
            mu: Complex::new(0.0, 0.0),
            alpha: Complex::new(0.0, 0.0),
            beta: Complex::new(1.0, 0.0),
            vector: CVector::zeros(0),
        };
        let inf = PencilEigen {
            kind: EigenKind::Infinite,
            mu: Complex::new(f64::INFINITY, 0.0),
            alpha: Complex::new(1.0, 0.0),
            beta: Complex::new(0.0, 0.0),
            vector: CVector::zeros(0),
        };
        eigenvalues.extend(std::iter::repeat_n(zero, zero_count));
        eigenvalues.extend(std::iter::repeat_n(inf, infinite_count));
        Self { eigenvalues, zero_count, infinite_count, l: Mat::zeros(0, 0), m: Mat::zeros(0, 0) }
    }

    pub fn finite_nonzero(&self) -> impl Iterator<Item = Complex<f64>> + '_ {
        self.eigenvalues.iter().filter(|e| e.kind == EigenKind::Finite).map(|e| e.mu)
    }

    /// Graph matrix P of the stable deflating subspace {(x, P x)}, spanned by
    /// the eigenvectors with |mu| < 1 (zero eigenvalues included).
    pub fn stable_graph(&self) -> Result<Mat> {
        let n = self.l.nrows() / 2;
        let stable: Vec<&PencilEigen> = self
            .eigenvalues
            .iter()
            .filter(|e| e.kind == EigenKind::Zero || (e.kind == EigenKind::Finite && e.mu.norm() < 1.0))
            .collect();
        if stable.len() != n || stable.iter().any(|e| e.vector.len() != 2 * n) {
            return Err(Error::NotHyperbolic(format!("found {} stable eigenvectors, expected {n}", stable.len())));
        }
        let mut basis = CMat::zeros(2 * n, n);
        for (j, e) in stable.iter().enumerate() {
            basis.set_column(j, &e.vector);
        }
        let x = basis.rows(0, n).into_owned();
        let lam = basis.rows(n, n).into_owned();
        let x_inv = x.try_inverse().ok_or_else(|| Error::Singular("state part of the stable subspace".into()))?;
        let graph = lam * x_inv;
        Ok(graph.map(|z| z.re))
    }
}

pub fn pencil_matrices(prob: &Problem) -> Result<(Mat, Mat)> {
    if prob.has_cross_term() {
        return Err(Error::InvalidProblem("pencil requires S = 0; eliminate the cross term first".into()));
    }
    let n = prob.n();
    let gain = &prob.b * linalg::spd_inverse(&prob.r, "R")? * prob.b.transpose();
    let mut l = Mat::zeros(2 * n, 2 * n);
    l.view_mut((0, 0), (n, n)).copy_from(&prob.a);
    l.view_mut((n, 0), (n, n)).copy_from(&prob.q);
    l.view_mut((n, n), (n, n)).copy_from(&(-Mat::identity(n, n)));
    let mut m = Mat::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&Mat::identity(n, n));
    m.view_mut((0, n), (n, n)).copy_from(&gain);
    m.view_mut((n, n), (n, n)).copy_from(&(-prob.a.transpose()));
    Ok((l, m))
}

fn reciprocal_condition(m: &Mat) -> f64 {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.max();
    if top == 0.0 {
        0.0
    } else {
        sv.min() / top
    }
}

/// Right and left singular vectors for the `count` smallest singular values.
fn smallest_singular_vectors(a: &CMat, count: usize) -> (Vec<CVector>, Vec<CVector>) {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^H");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let right = order[..count].iter().map(|&i| v_t.row(i).adjoint()).collect();
    let left = order[..count].iter().map(|&i| u.column(i).into_owned()).collect();
    (right, left)
}

/// Generalised eigenvalues and eigenvectors of L v = mu M v, by shift-invert
/// with a shift on the unit circle followed by two-sided Rayleigh refinement.
pub fn pencil_eigenvalues(prob: &Problem, tol: &Tolerances) -> Result<PencilSpectrum> {
    let (l, m) = pencil_matrices(prob)?;
    let dim = l.nrows();

    let (sigma, rcond) = SHIFTS
        .iter()
        .map(|&s| (s, reciprocal_condition(&(&l - &m * s))))
        .fold((SHIFTS[0], -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
    if rcond < 1e-13 {
        return Err(Error::DegeneratePencil);
    }
    let shifted = (&l - &m * sigma).lu();
    let c = shifted.solve(&m).ok_or(Error::DegeneratePencil)?;
    let c_scale = c.norm().max(1.0);

    let lc = linalg::to_complex(&l);
    let mc = linalg::to_complex(&m);
    let mut eigenvalues = Vec::with_capacity(dim);
    for nu in linalg::eigenvalues(&c) {
        // mu = sigma + 1/nu  <=>  (alpha, beta) = (sigma nu + 1, nu)
        let alpha = nu * sigma + 1.0;
        let beta = nu;
        let len = (alpha.norm_sqr() + beta.norm_sqr()).sqrt();
        let (alpha, beta) = (alpha / len, beta / len);
        if nu.norm() <= tol.infinite_eigenvalue * c_scale {
            eigenvalues.push(PencilEigen {
                kind: EigenKind::Infinite,
                mu: Complex::new(f64::INFINITY, 0.0),
                alpha,
                beta,
                vector: CVector::zeros(0),
            });
            continue;
        }
        let mu = alpha / beta;
        let kind = if mu.norm() < tol.zero_eigenvalue { EigenKind::Zero } else { EigenKind::Finite };
        eigenvalues.push(PencilEigen { kind, mu, alpha, beta, vector: CVector::zeros(0) });
    }

    // Refine simple finite eigenvalues.
    let snapshot: Vec<Complex<f64>> = eigenvalues.iter().map(|e| e.mu).collect();
    for (i, e) in eigenvalues.iter_mut().enumerate() {
        if e.kind != EigenKind::Finite {
            continue;
        }
        let isolated = snapshot
            .iter()
            .enumerate()
            .all(|(j, o)| j == i || !o.re.is_finite() || (o - e.mu).norm() > CLUSTER_TOL * (1.0 + e.mu.norm()));
        if !isolated {
            continue;
        }
        let mut mu = e.mu;
        for _ in 0..REFINE_STEPS {
            let (right, left) = smallest_singular_vectors(&(&lc - &mc * mu), 1);
            let num = left[0].dotc(&(&lc * &right[0]));
            let den = left[0].dotc(&(&mc * &right[0]));
            if den.norm() == 0.0 {
                break;
            }
            let next = num / den;
            if !next.re.is_finite() || !next.im.is_finite() {
                break;
            }
            mu = next;
        }
        e.mu = mu;
        let len = (1.0 + mu.norm_sqr()).sqrt();
        e.alpha = mu / len;
        e.beta = Complex::new(1.0 / len, 0.0);
        if mu.norm() < tol.zero_eigenvalue {
            e.kind = EigenKind::Zero;
        }
    }

    // Eigenvectors, cluster by cluster.
    let mut assigned = vec![false; eigenvalues.len()];
    for i in 0..eigenvalues.len() {
        if assigned[i] {
            continue;
        }
        let kind = eigenvalues[i].kind;
        let members: Vec<usize> = (i..eigenvalues.len())
            .filter(|&j| {
                !assigned[j]
                    && match kind {
                        EigenKind::Infinite => eigenvalues[j].kind == EigenKind::Infinite,
                        EigenKind::Zero => eigenvalues[j].kind == EigenKind::Zero,
                        EigenKind::Finite => {
                            eigenvalues[j].kind == EigenKind::Finite
                                && (eigenvalues[j].mu - eigenvalues[i].mu).norm()
                                    <= CLUSTER_TOL * (1.0 + eigenvalues[i].mu.norm())
                        }
                    }
            })
            .collect();
        let operator = match kind {
            EigenKind::Infinite => mc.clone(),
            EigenKind::Zero => lc.clone(),
            EigenKind::Finite => {
                let mean = members.iter().map(|&j| eigenvalues[j].mu).sum::<Complex<f64>>() / members.len() as f64;
                &lc - &mc * mean
            }
        };
        let (right, _) = smallest_singular_vectors(&operator, members.len().min(dim));
        for (&j, v) in members.iter().zip(right) {
            eigenvalues[j].vector = v;
            assigned[j] = true;
        }
    }

    let zero_count = eigenvalues.iter().filter(|e| e.kind == EigenKind::Zero).count();
    let infinite_count = eigenvalues.iter().filter(|e| e.kind == EigenKind::Infinite).count();
    Ok(PencilSpectrum { eigenvalues, zero_count, infinite_count, l, m })
}

/// Eigen-equation residual ||L v - mu M v|| / ((||L|| + |mu| ||M||) ||v||), worst over finite pairs.
pub fn eigen_residual(spec: &PencilSpectrum) -> f64 {
    let lc = linalg::to_complex(&spec.l);
    let mc = linalg::to_complex(&spec.m);
    let (ln, mn) = (spec.l.norm(), spec.m.norm());
    spec.eigenvalues
        .iter()
        .filter(|e| e.kind != EigenKind::Infinite && !e.vector.is_empty())
        .map(|e| {
            let r = (&lc * &e.vector - &mc * &e.vector * e.mu).norm();
            r / ((ln + e.mu.norm() * mn) * e.vector.norm())
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum ReciprocityFailure {
    Unpaired { mu: [f64; 2] },
    ZeroInfiniteImbalance { zero: usize, infinite: usize },
    NonHyperbolic { mu: [f64; 2] },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ReciprocityReport {
    pub failures: Vec<ReciprocityFailure>,
    /// Eigenvalues for which more than one partner fell inside the tolerance.
    pub ambiguous: Vec<[f64; 2]>,
    /// Largest relative mismatch |mu nu - 1| over accepted pairs.
    pub worst_pair_error: f64,
}

impl ReciprocityReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn hyperbolic(&self) -> bool {
        !self.failures.iter().any(|f| matches!(f, ReciprocityFailure::NonHyperbolic { .. }))
    }
}

/// Checks closure of the finite nonzero spectrum under mu -> 1/mu, the
/// zero/infinite balance, and the absence of eigenvalues on the unit circle.
pub fn reciprocity_check(spec: &PencilSpectrum, tol: &Tolerances) -> ReciprocityReport {
    let mut report = ReciprocityReport::default();
    if spec.zero_count != spec.infinite_count {
        report
            .failures
            .push(ReciprocityFailure::ZeroInfiniteImbalance { zero: spec.zero_count, infinite: spec.infinite_count });
    }
    let mut values: Vec<Complex<f64>> = spec.finite_nonzero().collect();
    for mu in &values {
        if (mu.norm() - 1.0).abs() <= tol.hyperbolicity {
            report.failures.push(ReciprocityFailure::NonHyperbolic { mu: [mu.re, mu.im] });
        }
    }
    values.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let mut used = vec![false; values.len()];
    for i in 0..values.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let target = values[i].inv();
        let mut candidates: Vec<(usize, f64)> = (0..values.len())
            .filter(|&j| !used[j])
            .map(|j| (j, (values[j] - target).norm() / target.norm()))
            .filter(|&(_, d)| d <= tol.reciprocity)
            .collect();
        candidates.sort_by(|a, b| a.1.total_cmp(&b.1));
        match candidates.first() {
            Some(&(j, d)) => {
                used[j] = true;
                report.worst_pair_error = report.worst_pair_error.max(d);
                if candidates.len() > 1 {
                    report.ambiguous.push([values[i].re, values[i].im]);
                }
            }
            None => report.failures.push(ReciprocityFailure::Unpaired { mu: [values[i].re, values[i].im] }),
        }
    }
    report
}

/// Omega(v, w) = v' J w with J = [[0, I], [-I, 0]].
pub fn symplectic_form(v: &[f64], w: &[f64]) -> Result<f64> {
    if v.len() != w.len() || !v.len().is_multiple_of(2) {
        return Err(Error::Dimension(format!(
            "two-form needs equal even-length vectors, got {} and {}",
            v.len(),
            w.len()
        )));
    }
    let n = v.len() / 2;
    Ok((0..n).map(|i| v[i] * w[n + i] - v[n + i] * w[i]).sum())
}

/// Tangent vector (dx, dlambda) at a point of the state/costate space.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector {
    pub dx: Vector,
    pub dlambda: Vector,
}

impl TangentVector {
    pub fn stacked(&self) -> Vec<f64> {
        self.dx.iter().chain(self.dlambda.iter()).copied().collect()
    }

    pub fn omega(&self, other: &TangentVector) -> f64 {
        symplectic_form(&self.stacked(), &other.stacked()).expect("tangent vectors share a dimension")
    }
}

/// Linearised step in its natural mixed form:
/// (dx+, dlambda) = [[H_{l x}, H_{l l}], [H_{x x}, H_{l x}']] (dx, dlambda+).
pub fn tangent_step(
    prob: &Problem,
    pt: &BidirectionalPoint,
    dx: &Vector,
    dlambda_plus: &Vector,
    tol: &Tolerances,
) -> Result<(Vector, Vector)> {
    let h = reduced_hessian(prob, pt, tol)?;
    Ok(apply_mixed(&h, dx, dlambda_plus))
}

fn apply_mixed(h: &ReducedHessian, dx: &Vector, dlambda_plus: &Vector) -> (Vector, Vector) {
    let dx_plus = &h.lambda_x * dx + &h.lambda_lambda * dlambda_plus;
    let dlambda = &h.x_x * dx + h.lambda_x.transpose() * dlambda_plus;
    (dx_plus, dlambda)
}

/// Forward form v = (dx, dlambda) -> v+ = (dx+, dlambda+); needs H_{l x}' invertible.
pub fn tangent_step_forward(
    prob: &Problem,
    pt: &BidirectionalPoint,
    v: &TangentVector,
    tol: &Tolerances,
) -> Result<TangentVector> {
    let h = reduced_hessian(prob, pt, tol)?;
    let rhs = &v.dlambda - &h.x_x * &v.dx;
    let dlambda_plus = h
        .lambda_x
        .transpose()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|x| x.is_finite()))
        .ok_or_else(|| Error::Singular("H_{lambda+ x} in the forward tangent step".into()))?;
    let dx_plus = &h.lambda_x * &v.dx + &h.lambda_lambda * &dlambda_plus;
    Ok(TangentVector { dx: dx_plus, dlambda: dlambda_plus })
}

/// Tangent vectors along a base trajectory, given the initial state
/// perturbation and the terminal costate perturbation. `base[k]` is the point
/// (x_k, lambda_{k+1}); the result has `base.len() + 1` entries.
///
/// State perturbations propagate forward and costate perturbations backward,
/// so the chain is the solution of one block-banded linear system rather than
/// a forward recursion.
pub fn propagate_tangent(
    prob: &Problem,
    base: &[BidirectionalPoint],
    dx0: &Vector,
    dlambda_end: &Vector,
    tol: &Tolerances,
) -> Result<Vec<TangentVector>> {
    let n = prob.n();
    let steps = base.len();
    if dx0.len() != n || dlambda_end.len() != n {
        return Err(Error::Dimension("tangent boundary data must have length n".into()));
    }
    if steps == 0 {
        return Ok(vec![TangentVector { dx: dx0.clone(), dlambda: dlambda_end.clone() }]);
    }
    let hess: Vec<ReducedHessian> = base.iter().map(|pt| reduced_hessian(prob, pt, tol)).collect::<Result<_>>()?;
    let size = 2 * n * steps;
    // unknowns: dx_1..dx_N then dlambda_0..dlambda_{N-1}
    let ix = |k: usize| (k - 1) * n;
    let il = |k: usize| n * steps + k * n;
    let mut sys = Mat::zeros(size, size);
    let mut rhs = Vector::zeros(size);
    for (k, h) in hess.iter().enumerate() {
        let row_x = k * n;
        let row_l = n * steps + k * n;
        // dx_{k+1} - H_lx dx_k - H_ll dlambda_{k+1} = 0
        sys.view_mut((row_x, ix(k + 1)), (n, n)).copy_from(&Mat::identity(n, n));
        if k == 0 {
            rhs.rows_mut(row_x, n).copy_from(&(&h.lambda_x * dx0));
        } else {
            sys.view_mut((row_x, ix(k)), (n, n)).copy_from(&(-&h.lambda_x));
        }
        if k + 1 == steps {
            let mut seg = rhs.rows_mut(row_x, n);
            seg += &h.lambda_lambda * dlambda_end;
        } else {
            sys.view_mut((row_x, il(k + 1)), (n, n)).copy_from(&(-&h.lambda_lambda));
        }
        // dlambda_k - H_xx dx_k - H_lx' dlambda_{k+1} = 0
        sys.view_mut((row_l, il(k)), (n, n)).copy_from(&Mat::identity(n, n));
        if k == 0 {
            rhs.rows_mut(row_l, n).copy_from(&(&h.x_x * dx0));
        } else {
            sys.view_mut((row_l, ix(k)), (n, n)).copy_from(&(-&h.x_x));
        }
        if k + 1 == steps {
            let mut seg = rhs.rows_mut(row_l, n);
            seg += h.lambda_x.transpose() * dlambda_end;
        } else {
            sys.view_mut((row_l, il(k + 1)), (n, n)).copy_from(&(-h.lambda_x.transpose()));
        }
    }
    let sol = sys
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("tangent boundary-value system".into()))?;
    let mut out = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let dx = if k == 0 { dx0.clone() } else { sol.rows(ix(k), n).into_owned() };
        let dlambda = if k == steps { dlambda_end.clone() } else { sol.rows(il(k), n).into_owned() };
        out.push(TangentVector { dx, dlambda });
    }
    Ok(out)
}

/// Largest drift max_k |Omega(v_k, w_k) - Omega(v_0, w_0)|, relative to
/// max_k |v_k| |w_k| (which bounds every |Omega(v_k, w_k)|).
pub fn invariance_defect(v: &[TangentVector], w: &[TangentVector]) -> f64 {
    let Some((v0, w0)) = v.first().zip(w.first()) else {
        return 0.0;
    };
    let start = v0.omega(w0);
    let scale = v
        .iter()
        .zip(w)
        .map(|(a, b)| {
            a.stacked().iter().map(|x| x * x).sum::<f64>().sqrt()
                * b.stacked().iter().map(|x| x * x).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    v.iter().zip(w).map(|(a, b)| (a.omega(b) - start).abs() / scale).fold(0.0, f64::max)
}
