//! Discrete Gronwall envelopes.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GronwallKind {
    /// Sequences with u_{k+1} <= delta u_k + l.
    Linear { delta: f64, l: f64, u0: f64 },
    /// Sequences with |xi_k| <= c1 sum_{j<k} |xi_j| + c2.
    Summed { c1: f64, c2: f64 },
}

/// Envelope values for k = 0..=k_max.
///
/// Linear: delta^k u0 + l * sum_{j=0}^{k-1} delta^{k-1-j}.
/// Summed: c2 * sum_{j=1}^{k} (1 + c1)^j, which bounds the sequence for k >= 1.
pub fn gronwall_bounds(kind: GronwallKind, k_max: usize) -> Result<Vec<f64>> {
    match kind {
        GronwallKind::Linear { delta, l, u0 } => {
            if delta < 0.0 || l < 0.0 || !delta.is_finite() || !l.is_finite() || !u0.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "Gronwall parameters must be non-negative (delta = {delta}, l = {l})"
                )));
            }
            let mut out = Vec::with_capacity(k_max + 1);
            let (mut pow, mut geo) = (1.0, 0.0);
            for _ in 0..=k_max {
                out.push(pow * u0 + l * geo);
                geo = geo * delta + 1.0;
                pow *= delta;
            }
            Ok(out)
        }
        GronwallKind::Summed { c1, c2 } => {
            if c1 < 0.0 || c2 < 0.0 || !c1.is_finite() || !c2.is_finite() {
                return Err(Error::InvalidProblem(format!(
                    "Gronwall parameters must be non-negative (c1 = {c1}, c2 = {c2})"
                )));
            }
            let mut out = Vec::with_capacity(k_max + 1);
            let (mut pow, mut sum) = (1.0, 0.0);
            out.push(0.0);
            for _ in 1..=k_max {
                pow *= 1.0 + c1;
                sum += pow;
                out.push(c2 * sum);
            }
            Ok(out)
        }
    }
}
