//! The local stable manifold lambda = P x + psi(x) as the fixed point of the
//! contraction T on grid functions.

mod diagnostics;
mod grid;
mod solve;

pub use diagnostics::{
    closedness_check, invariance_check, invariance_residual, lipschitz_diagnostics, sample_ball, ClosednessReport,
    InvarianceReport, LipschitzReport,
};
pub use grid::{GridFn, Interpolation, MAX_GRID_DIM};
pub use solve::{
    apply_t, h_psi_eval, implicit_state_step, phi_eval, rollout, solve_manifold, GridOptions, HorizonPolicy,
    ManifoldContext, ManifoldSolution, TStats, Trajectory, Truncation,
};
