//! The contraction T and its fixed point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::diagnostics::{lipschitz_diagnostics, LipschitzReport};
use super::grid::{GridFn, Interpolation};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::model::{eliminate_cross_term, Problem};
use crate::pmp::Remainders;
use crate::riccati::{solve_dtare, StabilizingSolution};
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOptions {
    pub resolution: usize,
    pub interpolation: Interpolation,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self { resolution: 41, interpolation: Interpolation::Cubic }
    }
}

/// Everything the iteration needs for one domain radius: the cross-term-free
/// working problem, its Riccati data and the localised remainders.
#[derive(Debug, Clone)]
pub struct ManifoldContext {
    pub problem: Problem,
    pub riccati: StabilizingSolution,
    pub acl: Mat,
    pub epsilon: f64,
    /// sqrt(x'Mx) for the closed-loop Lyapunov matrix M contracts by `alpha_m` per linear step.
    pub alpha_m: f64,
    /// sqrt of the condition number of M.
    pub kappa: f64,
    pub tol: Tolerances,
    remainders: Remainders,
    raw: Remainders,
    input_gain: Mat,
    /// (I + BR^{-1}B'P)^{-1}
    mix: Mat,
    acl_t: Mat,
    /// (A+BK)'P
    acl_t_p: Mat,
    /// K'B'
    kt_bt: Mat,
}

impl ManifoldContext {
    pub fn new(prob: &Problem, epsilon: f64, tol: &Tolerances) -> Result<Self> {
        let problem = eliminate_cross_term(prob)?.with_epsilon(epsilon)?;
        let riccati = solve_dtare(&problem, tol)?;
        let acl = riccati.closed_loop(&problem);
        let n = problem.n();
        let raw = Remainders::new(&problem, tol)?;
        // The grid cube reaches eps sqrt(n); the cut-off must be inactive on all of it,
        // since localising F and G separately breaks their Hamiltonian origin.
        let x_radius = epsilon * (n as f64).sqrt();
        let lambda_radius = x_radius * (1.0 + linalg::spectral_norm(&riccati.p));
        let remainders = raw.clone().localized(x_radius, lambda_radius);
        let input_gain = raw.input_gain().clone();
        let mix = linalg::inverse(&(Mat::identity(n, n) + &input_gain * &riccati.p), "I + BR^{-1}B'P")?;
        let m_eig = riccati.lyapunov_m.symmetric_eigenvalues();
        let (m_min, m_max) = (m_eig.min(), m_eig.max());
        let alpha_m = (1.0 - 1.0 / m_max).max(0.0).sqrt();
        let acl_t = acl.transpose();
        Ok(Self {
            acl_t_p: &acl_t * &riccati.p,
            kt_bt: riccati.k.transpose() * problem.b.transpose(),
            acl_t,
            acl,
            epsilon,
            alpha_m,
            kappa: (m_max / m_min).sqrt(),
            tol: tol.clone(),
            remainders,
            raw,
            input_gain,
            mix,
            riccati,
            problem,
        })
    }

    pub fn n(&self) -> usize {
        self.problem.n()
    }

    pub fn p(&self) -> &Mat {
        &self.riccati.p
    }

    /// Unlocalised remainders of the working problem.
    pub fn raw_remainders(&self) -> &Remainders {
        &self.raw
    }

    pub fn m_norm(&self, x: &Vector) -> f64 {
        x.dot(&(&self.riccati.lyapunov_m * x)).max(0.0).sqrt()
    }

    /// (f_psi, h_psi) at (x, x+).
    pub fn remainder_terms(&self, psi: &GridFn, x: &Vector, x_plus: &Vector) -> Result<(Vector, Vector)> {
        let psi_plus = psi.eval(x_plus.as_slice());
        let lambda_plus = &self.riccati.p * x_plus + &psi_plus;
        let r = self.remainders.eval(x, &lambda_plus)?;
        let f_psi = &self.mix * (&r.f - &self.input_gain * &psi_plus);
        let g_psi = &r.g - &self.kt_bt * (&psi_plus + &self.riccati.p * &f_psi);
        let h_psi = &self.acl_t_p * &f_psi + g_psi;
        Ok((f_psi, h_psi))
    }

    pub fn f_psi(&self, psi: &GridFn, x: &Vector, x_plus: &Vector) -> Result<Vector> {
        Ok(self.remainder_terms(psi, x, x_plus)?.0)
    }

    fn step(&self, psi: &GridFn, x: &Vector) -> Result<Vector> {
        let linear = &self.acl * x;
        if x.iter().all(|v| *v == 0.0) {
            return Ok(linear);
        }
        let tol = self.tol.implicit_step;
        let mut y = linear.clone();
        let mut last_diff = f64::INFINITY;
        let mut stalled = 0;
        for _ in 0..self.tol.implicit_max_iterations {
            let next = &linear + self.f_psi(psi, x, &y)?;
            let diff = (&next - &y).norm();
            y = next;
            if diff <= tol * y.norm() || diff == 0.0 {
                return Ok(y);
            }
            if diff >= last_diff {
                stalled += 1;
                if stalled >= self.tol.implicit_newton_after {
                    break;
                }
            }
            last_diff = diff;
        }
        self.newton_step(psi, x, &linear, y)
    }

    /// Damped Newton on y - (A+BK)x - f_psi(x, y) = 0 with a forward-difference Jacobian.
    fn newton_step(&self, psi: &GridFn, x: &Vector, linear: &Vector, mut y: Vector) -> Result<Vector> {
        let n = self.n();
        let residual = |y: &Vector| -> Result<Vector> { Ok(y - linear - self.f_psi(psi, x, y)?) };
        let mut g = residual(&y)?;
        for _ in 0..self.tol.newton_max_iterations {
            if g.norm() <= self.tol.implicit_step * y.norm().max(f64::MIN_POSITIVE) {
                return Ok(y);
            }
            let mut jac = Mat::zeros(n, n);
            for j in 0..n {
                let step = 1e-7 * y[j].abs().max(x.norm()).max(f64::MIN_POSITIVE);
                let mut yp = y.clone();
                yp[j] += step;
                jac.set_column(j, &((residual(&yp)? - &g) / step));
            }
            let Some(delta) = jac.lu().solve(&g) else { break };
            let mut t = 1.0;
            loop {
                let trial = &y - &delta * t;
                let gt = residual(&trial)?;
                if gt.norm() < g.norm() || t < 1e-4 {
                    y = trial;
                    g = gt;
                    break;
                }
                t *= 0.5;
            }
        }
        Err(Error::NoConvergence(format!("implicit state step at x = {:?}", x.as_slice())))
    }
}

/// x+ solving x+ = (A+BK)x + f_psi(x, x+).
pub fn implicit_state_step(ctx: &ManifoldContext, psi: &GridFn, x: &Vector) -> Result<Vector> {
    if !psi.contains(x.as_slice()) {
        return Err(Error::OutOfDomain { point: x.as_slice().to_vec(), radius: ctx.epsilon });
    }
    ctx.step(psi, x)
}

pub fn h_psi_eval(ctx: &ManifoldContext, psi: &GridFn, x: &Vector, x_plus: &Vector) -> Result<Vector> {
    Ok(ctx.remainder_terms(psi, x, x_plus)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonPolicy {
    /// Stop once |x_l| falls below the rollout tolerance.
    UntilSmall,
    Fixed(usize),
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Vector>,
    /// Largest one-step ratio of the Lyapunov norm sqrt(x'Mx).
    pub decay_ratio: f64,
}

impl Trajectory {
    /// (alpha_M + N eps) / (1 - N eps) for a Lipschitz constant `n1_eps` = N eps
    /// of f_psi; below 1 the perturbed closed loop still contracts.
    pub fn decay_budget(ctx: &ManifoldContext, n1_eps: f64) -> f64 {
        if n1_eps >= 1.0 {
            f64::INFINITY
        } else {
            (ctx.alpha_m + ctx.kappa * n1_eps) / (1.0 - ctx.kappa * n1_eps)
        }
    }
}

fn decay_ratio(ctx: &ManifoldContext, x: &Vector, x_plus: &Vector) -> f64 {
    let before = ctx.m_norm(x);
    if before == 0.0 {
        0.0
    } else {
        ctx.m_norm(x_plus) / before
    }
}

pub fn rollout(ctx: &ManifoldContext, psi: &GridFn, x0: &Vector, policy: HorizonPolicy) -> Result<Trajectory> {
    if !psi.contains(x0.as_slice()) {
        return Err(Error::OutOfDomain { point: x0.as_slice().to_vec(), radius: ctx.epsilon });
    }
    let mut states = vec![x0.clone()];
    let mut worst = 0.0_f64;
    let limit = match policy {
        HorizonPolicy::UntilSmall => ctx.tol.rollout_max_steps,
        HorizonPolicy::Fixed(l) => l,
    };
    while states.len() <= limit {
        let x = states.last().expect("non-empty");
        if policy == HorizonPolicy::UntilSmall && x.norm() <= ctx.tol.rollout_stop {
            break;
        }
        let next = ctx.step(psi, x)?;
        let ratio = decay_ratio(ctx, x, &next);
        if ratio >= 1.0 {
            return Err(Error::NonDecay { x0: x0.as_slice().to_vec(), ratio });
        }
        worst = worst.max(ratio);
        states.push(next);
    }
    if policy == HorizonPolicy::UntilSmall && states.last().expect("non-empty").norm() > ctx.tol.rollout_stop {
        return Err(Error::NoConvergence(format!(
            "rollout from {:?} did not reach {} in {limit} steps",
            x0.as_slice(),
            ctx.tol.rollout_stop
        )));
    }
    Ok(Trajectory { states, decay_ratio: worst })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truncation {
    /// Per node, stop once the tail bound of the remaining series is below the tolerance.
    Adaptive,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TStats {
    /// Longest series used over the nodes.
    pub horizon: usize,
    /// Lipschitz bound on h_psi used in the tail estimate.
    pub h_lipschitz: f64,
}

struct NodeSum {
    value: Vector,
    terms: usize,
}

fn node_series(
    ctx: &ManifoldContext,
    psi: &GridFn,
    x0: Vector,
    first: (Vector, Vector),
    truncation: Truncation,
    h_lip: f64,
) -> Result<NodeSum> {
    let n = ctx.n();
    let tol = &ctx.tol;
    let (mut x_next, mut h) = first;
    let mut x = x0.clone();
    let mut power = Mat::identity(n, n);
    let mut value = Vector::zeros(n);
    let mut worst = ctx.alpha_m;
    let mut terms = 0;
    loop {
        value += &power * &h;
        terms += 1;
        power = &ctx.acl_t * &power;
        let ratio = decay_ratio(ctx, &x, &x_next);
        if ratio >= 1.0 {
            return Err(Error::NonDecay { x0: x0.as_slice().to_vec(), ratio });
        }
        worst = worst.max(ratio);
        x = x_next;
        let done = match truncation {
            Truncation::Fixed(l) => terms >= l,
            Truncation::Adaptive => {
                let rest =
                    power.norm() * ctx.kappa * h_lip * (1.0 + worst) * ctx.m_norm(&x) / (1.0 - ctx.alpha_m * worst);
                rest <= tol.series_tail || x.iter().all(|v| *v == 0.0)
            }
        };
        if done {
            return Ok(NodeSum { value, terms });
        }
        if terms >= tol.rollout_max_steps {
            return Err(Error::NoConvergence(format!(
                "series at node {:?} not truncated within {} terms",
                x0.as_slice(),
                tol.rollout_max_steps
            )));
        }
        x_next = ctx.step(psi, &x)?;
        h = ctx.remainder_terms(psi, &x, &x_next)?.1;
    }
}

/// (T psi)(x0) = sum_l ((A+BK)')^l h_psi(x_l, x_{l+1}) along the rollout from
/// each node, evaluated in parallel; the origin node is pinned to zero.
pub fn apply_t(ctx: &ManifoldContext, psi: &GridFn, truncation: Truncation) -> Result<(GridFn, TStats)> {
    let count = psi.node_count();
    let origin = psi.origin_index();
    let firsts: Vec<(Vector, Vector)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let x0 = psi.node(i);
            let x1 = ctx.step(psi, &x0)?;
            let h = ctx.remainder_terms(psi, &x0, &x1)?.1;
            Ok((x1, h))
        })
        .collect::<Result<_>>()?;
    // h_psi = O(|x|^2): the chord ratio at the outermost nodes bounds it for
    // every smaller argument, doubled for safety.
    let h_lip = 2.0
        * (0..count)
            .filter(|&i| i != origin)
            .map(|i| firsts[i].1.norm() / (psi.node(i).norm() + firsts[i].0.norm()))
            .fold(0.0, f64::max);
    let sums: Vec<NodeSum> = firsts
        .into_par_iter()
        .enumerate()
        .map(|(i, first)| {
            if i == origin {
                return Ok(NodeSum { value: Vector::zeros(ctx.n()), terms: 0 });
            }
            node_series(ctx, psi, psi.node(i), first, truncation, h_lip)
        })
        .collect::<Result<_>>()?;
    let horizon = sums.iter().map(|s| s.terms).max().unwrap_or(0);
    let values: Vec<f64> = sums.iter().flat_map(|s| s.value.iter().copied()).collect();
    let next = GridFn::from_values(psi.n(), psi.n_out(), psi.epsilon(), psi.resolution(), psi.interpolation(), values)?;
    Ok((next, TStats { horizon, h_lipschitz: h_lip }))
}

#[derive(Debug, Clone)]
pub struct ManifoldSolution {
    pub context: ManifoldContext,
    pub psi: GridFn,
    /// Largest ratio of successive iteration deltas.
    pub contraction_estimate: f64,
    pub iteration_count: usize,
    pub residual_history: Vec<f64>,
    pub truncation_horizon: usize,
    /// sup over nodes of |T psi - psi| for the returned psi.
    pub fixed_point_residual: f64,
    pub halvings: usize,
    pub lipschitz: LipschitzReport,
}

impl ManifoldSolution {
    pub fn p(&self) -> &Mat {
        self.context.p()
    }

    pub fn epsilon(&self) -> f64 {
        self.context.epsilon
    }
}

fn iterate(ctx: &ManifoldContext, grid: &GridOptions) -> Result<Option<ManifoldSolution>> {
    let tol = &ctx.tol;
    let n = ctx.n();
    let mut psi = GridFn::zeros(n, n, ctx.epsilon, grid.resolution, grid.interpolation)?;
    let mut history = Vec::new();
    let mut horizon;
    let mut contraction: f64 = 0.0;
    loop {
        let (next, stats) = match apply_t(ctx, &psi, Truncation::Adaptive) {
            Ok(r) => r,
            Err(Error::NonDecay { .. } | Error::NoConvergence(_)) => return Ok(None),
            Err(e) => return Err(e),
        };
        let delta = next.sup_distance(&psi);
        if let Some(&prev) = history.last() {
            if prev > 0.0 {
                contraction = contraction.max(delta / prev);
            }
        }
        history.push(delta);
        horizon = stats.horizon;
        psi = next;
        log::debug!("eps = {}: iteration {} delta {delta:e}", ctx.epsilon, history.len());
        if delta <= tol.fixed_point {
            break;
        }
        if contraction >= 1.0 || history.len() >= tol.fixed_point_max_iterations {
            return Ok(None);
        }
    }
    if contraction >= 1.0 {
        return Ok(None);
    }
    let (check, _) = apply_t(ctx, &psi, Truncation::Adaptive)?;
    let fixed_point_residual = check.sup_distance(&psi);
    let lipschitz = lipschitz_diagnostics(ctx, &psi)?;
    if !lipschitz.passed {
        return Ok(None);
    }
    Ok(Some(ManifoldSolution {
        context: ctx.clone(),
        psi,
        contraction_estimate: contraction,
        iteration_count: history.len(),
        residual_history: history,
        truncation_horizon: horizon,
        fixed_point_residual,
        halvings: 0,
        lipschitz,
    }))
}

/// Fixed point of T starting from psi = 0 on a grid of radius `prob.epsilon`,
/// halving the radius when the iteration fails to contract.
pub fn solve_manifold(prob: &Problem, grid: &GridOptions, tol: &Tolerances) -> Result<ManifoldSolution> {
    let mut epsilon = prob.epsilon;
    for halvings in 0..=tol.max_halvings {
        let ctx = ManifoldContext::new(prob, epsilon, tol)?;
        if let Some(mut sol) = iterate(&ctx, grid)? {
            sol.halvings = halvings;
            return Ok(sol);
        }
        log::info!("no contraction at eps = {epsilon}; halving");
        epsilon *= 0.5;
    }
    Err(Error::OutsideLocalRegime(format!(
        "no contraction after {} halvings of eps = {}",
        tol.max_halvings, prob.epsilon
    )))
}

/// lambda = P x + psi(x).
pub fn phi_eval(sol: &ManifoldSolution, x: &Vector) -> Result<Vector> {
    if x.len() != sol.psi.n() {
        return Err(Error::Dimension(format!("expected a {}-vector, got {}", sol.psi.n(), x.len())));
    }
    if !sol.psi.contains(x.as_slice()) {
        return Err(Error::OutOfDomain { point: x.as_slice().to_vec(), radius: sol.epsilon() });
    }
    Ok(sol.p() * x + sol.psi.eval(x.as_slice()))
}
