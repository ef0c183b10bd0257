//! Smooth localisation of the nonlinear remainders.

use serde::{Deserialize, Serialize};

use crate::linalg::Vector;

/// Radial C-infinity bump: 1 on the closed ball of radius `epsilon`, 0 outside
/// the ball of radius `2 epsilon`, built from t -> exp(-1/t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffProfile {
    pub epsilon: f64,
}

fn flat(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

impl CutoffProfile {
    pub fn new(epsilon: f64) -> Self {
        assert!(epsilon > 0.0, "cut-off radius must be positive");
        Self { epsilon }
    }

    /// Profile value at radius `r >= 0`.
    pub fn rho(&self, r: f64) -> f64 {
        let s = r / self.epsilon;
        if s <= 1.0 {
            return 1.0;
        }
        if s >= 2.0 {
            return 0.0;
        }
        let inner = flat(2.0 - s);
        inner / (inner + flat(s - 1.0))
    }

    pub fn apply(&self, y: &Vector) -> Vector {
        y * self.rho(y.norm())
    }
}

/// Returns y * rho(|y| / epsilon).
pub fn cutoff_apply(y: &Vector, profile: &CutoffProfile) -> Vector {
    profile.apply(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_inside_zero_outside() {
        let c = CutoffProfile::new(0.2);
        let y = Vector::from_vec(vec![0.12, -0.16]);
        assert_eq!(cutoff_apply(&y, &c), y);
        let far = Vector::from_vec(vec![0.3, 0.3]);
        assert_eq!(cutoff_apply(&far, &c), Vector::zeros(2));
        let edge = Vector::from_vec(vec![0.4, 0.0]);
        assert_eq!(cutoff_apply(&edge, &c), Vector::zeros(2));
    }

    #[test]
    fn transition_band_is_monotone_and_strict() {
        let c = CutoffProfile::new(1.0);
        let y = Vector::from_vec(vec![1.5]);
        let out = cutoff_apply(&y, &c).norm();
        assert!(out > 0.0 && out < 1.5);
        let samples: Vec<f64> = (0..=10_000).map(|k| c.rho(1.0 + k as f64 / 10_000.0)).collect();
        assert!(samples.windows(2).all(|w| w[1] <= w[0]));
        assert!(samples.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(samples[0], 1.0);
        assert_eq!(*samples.last().unwrap(), 0.0);
    }
}
