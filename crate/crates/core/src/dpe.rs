//! Optimal cost and feedback recovered from the manifold, checked against the
//! dynamic programming equations and a brute-force value iteration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::manifold::{implicit_state_step, phi_eval, sample_ball, GridFn, Interpolation, ManifoldSolution};
use crate::model::Problem;
use crate::pmp::{optimal_control, BidirectionalPoint};
use crate::tolerances::Tolerances;

// Gauss-Legendre, 8 nodes on [-1, 1].
const GL_NODES: [f64; 4] =
    [0.183_434_642_495_649_8, 0.525_532_409_916_329, 0.796_666_477_413_626_7, 0.960_289_856_497_536_3];
const GL_WEIGHTS: [f64; 4] =
    [0.362_683_783_378_362, 0.313_706_645_877_887_3, 0.222_381_034_453_374_5, 0.101_228_536_290_376_3];
const MAX_DEPTH: usize = 40;

fn gauss8(f: &impl Fn(f64) -> Result<f64>, a: f64, b: f64) -> Result<f64> {
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    let mut sum = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        sum += w * (f(mid - half * x)? + f(mid + half * x)?);
    }
    Ok(sum * half)
}

fn adaptive(f: &impl Fn(f64) -> Result<f64>, a: f64, b: f64, whole: f64, tol: f64, depth: usize) -> Result<f64> {
    let mid = 0.5 * (a + b);
    let left = gauss8(f, a, mid)?;
    let right = gauss8(f, mid, b)?;
    if (left + right - whole).abs() <= tol * (1.0 + whole.abs()) {
        return Ok(left + right);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::NoConvergence(format!("quadrature on [{a}, {b}]")));
    }
    Ok(adaptive(f, a, mid, left, tol, depth + 1)? + adaptive(f, mid, b, right, tol, depth + 1)?)
}

/// Adaptive Gauss-Legendre on [0, 1], split first at `breaks`.
fn integrate_unit(f: impl Fn(f64) -> Result<f64>, mut breaks: Vec<f64>, tol: f64) -> Result<f64> {
    breaks.retain(|t| *t > 0.0 && *t < 1.0);
    breaks.push(0.0);
    breaks.push(1.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut total = 0.0;
    for w in breaks.windows(2) {
        let whole = gauss8(&f, w[0], w[1])?;
        total += adaptive(&f, w[0], w[1], whole, tol, 0)?;
    }
    Ok(total)
}

/// Parameters t in (0, 1) at which the segment a + t (b - a) crosses a grid line.
fn grid_crossings(psi: &GridFn, a: &Vector, b: &Vector) -> Vec<f64> {
    let mut out = Vec::new();
    for d in 0..a.len() {
        let (lo, hi) = (a[d].min(b[d]), a[d].max(b[d]));
        if hi == lo {
            continue;
        }
        for i in 0..psi.resolution() {
            let c = psi.coordinate(i);
            if c > lo && c < hi {
                out.push((c - a[d]) / (b[d] - a[d]));
            }
        }
    }
    out
}

/// pi(x) = int_0^1 phi(t x) . x dt along the straight ray from the origin.
pub fn cost_at(sol: &ManifoldSolution, x: &Vector) -> Result<f64> {
    if !sol.psi.contains(x.as_slice()) {
        return Err(Error::OutOfDomain { point: x.as_slice().to_vec(), radius: sol.epsilon() });
    }
    let origin = Vector::zeros(x.len());
    let integrand = |t: f64| -> Result<f64> { Ok(phi_eval(sol, &(x * t))?.dot(x)) };
    integrate_unit(integrand, grid_crossings(&sol.psi, &origin, x), sol.context.tol.quadrature)
}

/// The same integral along the axis-aligned path 0 -> x_1 e_1 -> x_1 e_1 + x_2 e_2 -> ... -> x.
pub fn cost_along_staircase(sol: &ManifoldSolution, x: &Vector) -> Result<f64> {
    if !sol.psi.contains(x.as_slice()) {
        return Err(Error::OutOfDomain { point: x.as_slice().to_vec(), radius: sol.epsilon() });
    }
    let mut corner = Vector::zeros(x.len());
    let mut total = 0.0;
    for d in 0..x.len() {
        if x[d] == 0.0 {
            continue;
        }
        let start = corner.clone();
        corner[d] = x[d];
        let integrand = |t: f64| -> Result<f64> {
            let mut p = start.clone();
            p[d] = t * x[d];
            Ok(phi_eval(sol, &p)?[d] * x[d])
        };
        total += integrate_unit(integrand, grid_crossings(&sol.psi, &start, &corner), sol.context.tol.quadrature)?;
    }
    Ok(total)
}

/// u = argmin_u H(x, phi(x+), u), with x+ from the implicit step on the manifold.
pub fn feedback_at(prob: &Problem, sol: &ManifoldSolution, x: &Vector) -> Result<Vector> {
    let x_plus = implicit_state_step(&sol.context, &sol.psi, x)?;
    // x+ may leave the cube from its corners; the step itself already used the
    // extrapolated psi there, so the costate must match it.
    let lambda_plus = sol.p() * &x_plus + sol.psi.eval(x_plus.as_slice());
    optimal_control(prob, &BidirectionalPoint::new(x.clone(), lambda_plus), &sol.context.tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Manifold,
    Oracle,
}

/// Optimal cost and feedback sampled on a grid.
#[derive(Debug, Clone)]
pub struct CostField {
    pub pi: GridFn,
    pub kappa: GridFn,
    pub provenance: Provenance,
}

/// pi on the manifold grid nodes.
pub fn integrate_cost(sol: &ManifoldSolution) -> Result<GridFn> {
    let psi = &sol.psi;
    let values: Vec<f64> =
        (0..psi.node_count()).into_par_iter().map(|i| cost_at(sol, &psi.node(i))).collect::<Result<_>>()?;
    GridFn::from_values(psi.n(), 1, psi.epsilon(), psi.resolution(), psi.interpolation(), values)
}

/// kappa on the manifold grid nodes.
pub fn feedback_policy(prob: &Problem, sol: &ManifoldSolution) -> Result<GridFn> {
    let psi = &sol.psi;
    let rows: Vec<Vector> =
        (0..psi.node_count()).into_par_iter().map(|i| feedback_at(prob, sol, &psi.node(i))).collect::<Result<_>>()?;
    let values = rows.iter().flat_map(|u| u.iter().copied()).collect();
    GridFn::from_values(psi.n(), prob.m(), psi.epsilon(), psi.resolution(), psi.interpolation(), values)
}

pub fn cost_field(prob: &Problem, sol: &ManifoldSolution) -> Result<CostField> {
    Ok(CostField { pi: integrate_cost(sol)?, kappa: feedback_policy(prob, sol)?, provenance: Provenance::Manifold })
}

/// A candidate solution of the dynamic programming equations.
pub trait ValueFunction {
    fn value(&self, x: &Vector) -> Result<f64>;
    fn gradient(&self, x: &Vector) -> Result<Vector>;
    fn policy(&self, x: &Vector) -> Result<Vector>;
}

/// Cost and feedback read off a manifold: value by quadrature, gradient phi.
pub struct ManifoldValue<'a> {
    pub problem: &'a Problem,
    pub solution: &'a ManifoldSolution,
}

impl ValueFunction for ManifoldValue<'_> {
    fn value(&self, x: &Vector) -> Result<f64> {
        cost_at(self.solution, x)
    }

    fn gradient(&self, x: &Vector) -> Result<Vector> {
        phi_eval(self.solution, x)
    }

    fn policy(&self, x: &Vector) -> Result<Vector> {
        feedback_at(self.problem, self.solution, x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpeSample {
    pub x: Vec<f64>,
    pub pi: f64,
    pub r1: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpeReport {
    pub samples: Vec<DpeSample>,
    /// max |r1| / (1 + |pi|)
    pub r1_max: f64,
    /// max |r2| / (1 + |pi|)
    pub r2_max: f64,
    pub passed: bool,
}

/// r1 = pi(x) - pi(f(x, k)) - l(x, k) and r2 = grad pi(f(x, k))' f_u + l_u at k = kappa(x).
pub fn dpe_residual(prob: &Problem, v: &impl ValueFunction, samples: &[Vector], tol: &Tolerances) -> Result<DpeReport> {
    let mut out = Vec::with_capacity(samples.len());
    let (mut r1_max, mut r2_max) = (0.0_f64, 0.0_f64);
    for x in samples {
        let u = v.policy(x)?;
        let dynamics = prob.eval_dynamics(x.as_slice(), u.as_slice(), false)?;
        let cost = prob.eval_cost(x.as_slice(), u.as_slice())?;
        let pi = v.value(x)?;
        let r1 = pi - v.value(&dynamics.value)? - cost.value;
        let r2 = (dynamics.fu.transpose() * v.gradient(&dynamics.value)? + &cost.lu).amax();
        let scale = 1.0 + pi.abs();
        r1_max = r1_max.max(r1.abs() / scale);
        r2_max = r2_max.max(r2 / scale);
        out.push(DpeSample { x: x.as_slice().to_vec(), pi, r1, r2 });
    }
    Ok(DpeReport { samples: out, r1_max, r2_max, passed: r1_max <= tol.dpe_residual && r2_max <= tol.dpe_residual })
}

/// Seeded sample points from the ball of the given radius.
pub fn ball_samples(n: usize, radius: f64, count: usize, seed: u64) -> Vec<Vector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| sample_ball(&mut rng, n, radius)).collect()
}

/// Largest |pi(x) along the ray - pi(x) along the staircase| over the samples.
pub fn path_independence(sol: &ManifoldSolution, samples: &[Vector]) -> Result<f64> {
    samples
        .iter()
        .map(|x| Ok((cost_at(sol, x)? - cost_along_staircase(sol, x)?).abs()))
        .try_fold(0.0_f64, |acc, d: Result<f64>| Ok(acc.max(d?)))
}

/// Largest relative mismatch between central differences of pi (step
/// 1e-5 eps) and phi over the samples.
pub fn gradient_consistency(sol: &ManifoldSolution, samples: &[Vector]) -> Result<f64> {
    let step = 1e-5 * sol.epsilon();
    let mut worst = 0.0_f64;
    for x in samples {
        let phi = phi_eval(sol, x)?;
        let mut fd = Vector::zeros(x.len());
        for d in 0..x.len() {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[d] += step;
            down[d] -= step;
            fd[d] = (cost_at(sol, &up)? - cost_at(sol, &down)?) / (2.0 * step);
        }
        worst = worst.max((&fd - &phi).norm() / phi.norm().max(f64::MIN_POSITIVE));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleOptions {
    /// The state grid covers [-half_width, half_width]^n.
    pub half_width: f64,
    pub state_step: f64,
    pub control_step: f64,
    /// Controls range over [-bound, bound]^m; when absent, 3 ||K|| half_width sqrt(n) + 10 control_step.
    pub control_bound: Option<f64>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { half_width: 0.1, state_step: 1e-3, control_step: 1e-3, control_bound: None }
    }
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub field: CostField,
    pub sweeps: usize,
    pub final_change: f64,
    /// No node value increased after the first sweep.
    pub monotone: bool,
    pub control_step: f64,
}

fn axis_points(bound: f64, step: f64) -> Vec<f64> {
    let k = (bound / step).round() as i64;
    (-k..=k).map(|i| i as f64 * step).collect()
}

/// Bellman lookup: multilinear inside the grid, quadratic along the ray
/// outside it.
fn lookup(pi: &GridFn, x: &Vector) -> f64 {
    let reach = x.amax();
    let w = pi.epsilon();
    if reach <= w {
        return pi.eval(x.as_slice())[0];
    }
    let edge = x * (w / reach);
    pi.eval(edge.as_slice())[0] * (reach / w).powi(2)
}

/// Brute-force value iteration pi <- min_u { l(x, u) + pi(f(x, u)) } from
/// pi_0 = 10 x'Px, with exhaustive minimisation over a control lattice.
pub fn value_iteration_oracle(prob: &Problem, opts: &OracleOptions, tol: &Tolerances) -> Result<OracleResult> {
    let n = prob.n();
    let m = prob.m();
    if n > 2 {
        return Err(Error::Dimension(format!("value iteration oracle supports n <= 2, got {n}")));
    }
    if !(opts.half_width > 0.0 && opts.state_step > 0.0 && opts.control_step > 0.0) {
        return Err(Error::InvalidProblem("oracle widths and steps must be positive".into()));
    }
    let riccati = crate::riccati::solve_dtare(prob, tol)?;
    let k_steps = (opts.half_width / opts.state_step).round() as usize;
    let half_width = k_steps as f64 * opts.state_step;
    let resolution = 2 * k_steps + 1;
    let mut pi = GridFn::zeros(n, 1, half_width, resolution, Interpolation::Multilinear)?;
    let nodes: Vec<Vector> = (0..pi.node_count()).map(|i| pi.node(i)).collect();
    for (i, x) in nodes.iter().enumerate() {
        pi.set_node(i, &[10.0 * x.dot(&(&riccati.p * x))]);
    }

    let bound = opts
        .control_bound
        .unwrap_or(3.0 * linalg::spectral_norm(&riccati.k) * half_width * (n as f64).sqrt() + 10.0 * opts.control_step);
    let axis = axis_points(bound, opts.control_step);
    let controls: Vec<Vector> = (0..axis.len().pow(m as u32))
        .map(|mut c| {
            let mut u = Vector::zeros(m);
            for j in (0..m).rev() {
                u[j] = axis[c % axis.len()];
                c /= axis.len();
            }
            u
        })
        .collect();
    // Prefer the smallest control among exact ties.
    let mut order: Vec<usize> = (0..controls.len()).collect();
    order.sort_by(|&a, &b| controls[a].norm().total_cmp(&controls[b].norm()));

    // Transitions and stage costs do not change between sweeps.
    let table: Vec<Vec<(Vector, f64)>> = nodes
        .par_iter()
        .map(|x| {
            order
                .iter()
                .map(|&c| {
                    let u = &controls[c];
                    Ok((prob.dynamics(x.as_slice(), u.as_slice())?, prob.stage_cost(x.as_slice(), u.as_slice())?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut monotone = true;
    let mut sweeps = 0;
    let mut change;
    let mut best_controls = vec![0usize; nodes.len()];
    loop {
        let updates: Vec<(f64, usize)> = table
            .par_iter()
            .map(|row| {
                let mut best = (f64::INFINITY, 0);
                for (j, (next, cost)) in row.iter().enumerate() {
                    let v = cost + lookup(&pi, next);
                    if v < best.0 {
                        best = (v, j);
                    }
                }
                best
            })
            .collect();
        sweeps += 1;
        change = 0.0_f64;
        let mut values = pi.values().to_vec();
        for (i, &(v, j)) in updates.iter().enumerate() {
            let old = values[i];
            if sweeps > 1 && v > old + 1e-15 * old.abs() {
                monotone = false;
            }
            change = change.max((v - old).abs());
            values[i] = v;
            best_controls[i] = order[j];
        }
        pi = GridFn::from_values(n, 1, half_width, resolution, Interpolation::Multilinear, values)?;
        if change <= tol.value_iteration {
            break;
        }
        if sweeps >= tol.value_iteration_max_sweeps {
            return Err(Error::NoConvergence(format!("value iteration after {sweeps} sweeps (change {change:e})")));
        }
    }
    let policy: Vec<f64> = best_controls.iter().flat_map(|&c| controls[c].iter().copied()).collect();
    let kappa = GridFn::from_values(n, m, half_width, resolution, Interpolation::Multilinear, policy)?;
    Ok(OracleResult {
        field: CostField { pi, kappa, provenance: Provenance::Oracle },
        sweeps,
        final_change: change,
        monotone,
        control_step: opts.control_step,
    })
}

/// Sup over the oracle nodes inside `radius` (max norm) of |pi_manifold - pi_oracle|.
pub fn oracle_gap(sol: &ManifoldSolution, oracle: &OracleResult, radius: f64) -> Result<f64> {
    let pi = &oracle.field.pi;
    let mut worst = 0.0_f64;
    for i in 0..pi.node_count() {
        let x = pi.node(i);
        if x.amax() > radius {
            continue;
        }
        worst = worst.max((cost_at(sol, &x)? - pi.at_node(i)[0]).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests;
