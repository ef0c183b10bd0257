//! Checks on a computed manifold: Lipschitz budget, closedness of the
//! one-form phi, and invariance under the bidirectional dynamics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::grid::GridFn;
use super::solve::{phi_eval, ManifoldContext, ManifoldSolution};
use crate::error::Result;
use crate::linalg::Vector;

const SAMPLE_SEED: u64 = 0x5eed_0001;

/// Uniform sample from the Euclidean ball of the given radius.
pub fn sample_ball(rng: &mut impl Rng, n: usize, radius: f64) -> Vector {
    loop {
        let v = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        if v.norm() <= 1.0 {
            return v * radius;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzReport {
    /// Adjacent-node Lipschitz estimate of psi.
    pub l_hat: f64,
    /// N1 such that N1 eps bounds the sampled Lipschitz constant of (f_psi, h_psi).
    pub n1_hat: f64,
    pub budget: f64,
    pub passed: bool,
}

/// Compares the grid Lipschitz constant of `psi` with 2 N1 eps / (1 - alpha).
///
/// N1 eps is estimated from sampled pairs as
/// max |(f, h)(x, x+) - (f, h)(y, y+)| / max(|x - y|, |x+ - y+|); half of the
/// pairs are within one grid spacing of each other.
pub fn lipschitz_diagnostics(ctx: &ManifoldContext, psi: &GridFn) -> Result<LipschitzReport> {
    let mut psi = psi.clone();
    psi.update_lipschitz();
    let n = ctx.n();
    let eps = ctx.epsilon;
    let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
    let pairs = ctx.tol.lipschitz_pairs;
    let mut lip = 0.0_f64;
    for k in 0..pairs {
        let x = sample_ball(&mut rng, n, eps);
        let y = if k % 2 == 0 {
            sample_ball(&mut rng, n, eps)
        } else {
            let near = &x + sample_ball(&mut rng, n, psi.spacing());
            if near.norm() > eps {
                continue;
            }
            near
        };
        let xp = implicit(ctx, &psi, &x)?;
        let yp = implicit(ctx, &psi, &y)?;
        let (fx, hx) = ctx.remainder_terms(&psi, &x, &xp)?;
        let (fy, hy) = ctx.remainder_terms(&psi, &y, &yp)?;
        let dist = (&x - &y).norm().max((&xp - &yp).norm());
        if dist > 0.0 {
            lip = lip.max((&fx - &fy).norm().max((&hx - &hy).norm()) / dist);
        }
    }
    let budget = 2.0 * lip / (1.0 - ctx.riccati.alpha) + ctx.tol.lipschitz_floor;
    Ok(LipschitzReport {
        l_hat: psi.lipschitz_estimate,
        n1_hat: lip / eps,
        budget,
        passed: psi.lipschitz_estimate <= budget,
    })
}

fn implicit(ctx: &ManifoldContext, psi: &GridFn, x: &Vector) -> Result<Vector> {
    super::solve::implicit_state_step(ctx, psi, x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosednessReport {
    /// max over interior nodes and i < j of |d phi_i / dx_j - d phi_j / dx_i|.
    pub max_curl: f64,
    pub spacing: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Central-difference curl of phi = P x + psi on the interior grid nodes.
#[allow(clippy::needless_range_loop)]
pub fn closedness_check(sol: &ManifoldSolution) -> ClosednessReport {
    let psi = &sol.psi;
    let n = psi.n();
    let h = psi.spacing();
    let threshold = sol.context.tol.closedness_constant * h * h + sol.context.tol.closedness_floor;
    let p = sol.p();
    let phi_at = |idx: &[usize]| -> Vector {
        let flat = psi.flat_index(idx);
        p * psi.node(flat) + Vector::from_column_slice(psi.at_node(flat))
    };
    let mut max_curl = 0.0_f64;
    if n > 1 {
        let res = psi.resolution();
        for flat in 0..psi.node_count() {
            let idx = psi.multi_index(flat);
            if idx.iter().any(|&i| i == 0 || i + 1 == res) {
                continue;
            }
            let diff = |axis: usize| -> Vector {
                let (mut up, mut down) = (idx.clone(), idx.clone());
                up[axis] += 1;
                down[axis] -= 1;
                (phi_at(&up) - phi_at(&down)) / (2.0 * h)
            };
            let grads: Vec<Vector> = (0..n).map(diff).collect();
            for i in 0..n {
                for j in i + 1..n {
                    max_curl = max_curl.max((grads[j][i] - grads[i][j]).abs());
                }
            }
        }
    }
    ClosednessReport { max_curl, spacing: h, threshold, passed: max_curl <= threshold }
}

/// |phi(x) - lambda| / (1 + |phi(x)|) where x+ comes from the implicit step,
/// lambda+ = phi(x+) and lambda = Qx + A'lambda+ + G(x, lambda+) with the
/// unlocalised remainder G.
pub fn invariance_residual(sol: &ManifoldSolution, x: &Vector) -> Result<f64> {
    let ctx = &sol.context;
    let phi = phi_eval(sol, x)?;
    let x_plus = implicit(ctx, &sol.psi, x)?;
    let lambda_plus = sol.p() * &x_plus + sol.psi.eval(x_plus.as_slice());
    let g = ctx.raw_remainders().eval(x, &lambda_plus)?.g;
    let prob = &ctx.problem;
    let lambda = &prob.q * x + prob.a.transpose() * &lambda_plus + g;
    Ok((&phi - &lambda).norm() / (1.0 + phi.norm()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub samples: usize,
    pub max_residual: f64,
    pub passed: bool,
}

/// Invariance residual at `samples` seeded random points of the eps/2 ball.
pub fn invariance_check(sol: &ManifoldSolution, samples: usize, seed: u64) -> Result<InvarianceReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let x = sample_ball(&mut rng, sol.psi.n(), 0.5 * sol.epsilon());
        worst = worst.max(invariance_residual(sol, &x)?);
    }
    Ok(InvarianceReport { samples, max_residual: worst, passed: worst <= sol.context.tol.invariance })
}
