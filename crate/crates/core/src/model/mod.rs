//! Problem definition and the utilities every later stage builds on.

pub mod cutoff;
pub mod gronwall;
pub mod poly;
pub mod problem;

pub use cutoff::{cutoff_apply, CutoffProfile};
pub use gronwall::{gronwall_bounds, GronwallKind};
pub use poly::{MonomialTerm, PolyEval, PolyMap};
pub use problem::{eliminate_cross_term, validate_problem, Problem, ValidationFailure, ValidationReport};
