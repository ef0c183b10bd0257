//! Every numerical threshold used by the solver, with its default.
//!
//! A `Tolerances` value travels with a run so that config files can override
//! any entry and reports can echo the values actually used.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative singular-value cutoff for rank decisions.
    pub rank: f64,
    /// Stop the Riccati recursion once successive iterates differ by this much (relative).
    pub dtare_step: f64,
    pub dtare_max_iterations: usize,
    /// Accepted Riccati residual, relative to 1 + ||P||.
    pub dtare_residual: f64,
    pub lyapunov_residual: f64,
    /// Closed-loop eigenvalues must satisfy |mu| < 1 - margin.
    pub closed_loop_margin: f64,
    /// First-order condition for the control minimisation, scaled by 1 + |lambda+| + |x|.
    pub newton_gradient: f64,
    pub newton_max_iterations: usize,
    pub zero_eigenvalue: f64,
    pub infinite_eigenvalue: f64,
    pub reciprocity: f64,
    pub hyperbolicity: f64,
    pub eigen_residual: f64,
    pub stable_subspace: f64,
    pub symplectic: f64,
    pub implicit_step: f64,
    pub implicit_max_iterations: usize,
    pub implicit_newton_after: usize,
    pub rollout_stop: f64,
    pub rollout_max_steps: usize,
    pub series_tail: f64,
    pub fixed_point: f64,
    pub fixed_point_certificate: f64,
    pub fixed_point_max_iterations: usize,
    pub max_halvings: usize,
    pub invariance: f64,
    pub psi_slope: f64,
    pub closedness_constant: f64,
    pub closedness_floor: f64,
    pub lipschitz_pairs: usize,
    pub lipschitz_floor: f64,
    pub quadrature: f64,
    pub path_independence: f64,
    pub dpe_residual: f64,
    pub gradient_consistency: f64,
    pub value_iteration: f64,
    pub value_iteration_max_sweeps: usize,
    pub oracle_cost: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rank: 1e-10,
            dtare_step: 1e-13,
            dtare_max_iterations: 100_000,
            dtare_residual: 1e-10,
            lyapunov_residual: 1e-12,
            closed_loop_margin: 1e-8,
            newton_gradient: 1e-12,
            newton_max_iterations: 50,
            zero_eigenvalue: 1e-10,
            infinite_eigenvalue: 1e-12,
            reciprocity: 1e-8,
            hyperbolicity: 1e-8,
            eigen_residual: 1e-9,
            stable_subspace: 1e-8,
            symplectic: 1e-10,
            implicit_step: 1e-12,
            implicit_max_iterations: 200,
            implicit_newton_after: 30,
            rollout_stop: 1e-12,
            rollout_max_steps: 10_000,
            series_tail: 1e-13,
            fixed_point: 1e-11,
            fixed_point_certificate: 2e-11,
            fixed_point_max_iterations: 200,
            max_halvings: 6,
            invariance: 1e-8,
            psi_slope: 1e-4,
            closedness_constant: 1.0,
            closedness_floor: 1e-6,
            lipschitz_pairs: 10_000,
            lipschitz_floor: 1e-12,
            quadrature: 1e-14,
            path_independence: 1e-8,
            dpe_residual: 1e-6,
            gradient_consistency: 1e-4,
            value_iteration: 1e-10,
            value_iteration_max_sweeps: 100_000,
            oracle_cost: 5e-4,
        }
    }
}
