//! Local stable manifolds of the bidirectional discrete-time Hamiltonian
//! dynamics of infinite-horizon nonlinear optimal control, and the optimal cost
//! and feedback they generate.
//!
//! The pipeline is: [`model`] defines a [`Problem`]; [`riccati`] solves for the
//! linear part `P`; [`spectral`] certifies hyperbolicity and symplectic
//! structure; [`manifold`] computes the nonlinear correction `psi` of the graph
//! `lambda = P x + psi(x)` as the fixed point of a contraction; [`dpe`] recovers
//! the optimal cost and feedback and checks them against dynamic programming.

pub mod cli;
pub mod dpe;
pub mod error;
pub mod linalg;
pub mod manifold;
pub mod model;
pub mod pmp;
pub mod riccati;
pub mod spectral;
pub mod tolerances;

pub use error::{Error, Result};
pub use model::Problem;
pub use tolerances::Tolerances;
