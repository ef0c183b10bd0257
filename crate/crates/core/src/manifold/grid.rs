//! Tensor-grid functions on the cube [-eps, eps]^n.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Vector;

pub const MAX_GRID_DIM: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Multilinear,
    /// Tensor-product four-point Lagrange; the stencil is clamped near the boundary.
    #[default]
    Cubic,
}

impl Interpolation {
    fn stencil(self) -> usize {
        match self {
            Interpolation::Multilinear => 2,
            Interpolation::Cubic => 4,
        }
    }

    /// First stencil node and weights along one axis at fractional index `t`.
    fn weights(self, t: f64, resolution: usize) -> (usize, [f64; 4]) {
        match self {
            Interpolation::Multilinear => {
                let j = (t.floor().max(0.0) as usize).min(resolution - 2);
                let s = t - j as f64;
                (j, [1.0 - s, s, 0.0, 0.0])
            }
            Interpolation::Cubic => {
                let j = ((t.floor() - 1.0).max(0.0) as usize).min(resolution - 4);
                let s = t - j as f64;
                let (a, b, c, d) = (s, s - 1.0, s - 2.0, s - 3.0);
                (j, [-b * c * d / 6.0, a * c * d / 2.0, -a * b * d / 2.0, a * b * c / 6.0])
            }
        }
    }
}

/// Values of an `n_out`-component function at the nodes of an odd-resolution
/// tensor grid. Nodes are stored row-major (last axis fastest), each node
/// holding `n_out` consecutive values.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFn {
    n: usize,
    n_out: usize,
    epsilon: f64,
    resolution: usize,
    interpolation: Interpolation,
    values: Vec<f64>,
    pub lipschitz_estimate: f64,
}

impl GridFn {
    pub fn zeros(
        n: usize,
        n_out: usize,
        epsilon: f64,
        resolution: usize,
        interpolation: Interpolation,
    ) -> Result<Self> {
        if n == 0 || n > MAX_GRID_DIM {
            return Err(Error::Dimension(format!("grid dimension must be 1..={MAX_GRID_DIM}, got {n}")));
        }
        if resolution.is_multiple_of(2) || resolution < 1 + interpolation.stencil() {
            return Err(Error::InvalidProblem(format!(
                "grid resolution must be odd and at least {}, got {resolution}",
                1 + interpolation.stencil()
            )));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidProblem(format!("grid radius must be positive, got {epsilon}")));
        }
        let count = resolution
            .checked_pow(n as u32)
            .and_then(|c| c.checked_mul(n_out))
            .ok_or_else(|| Error::InvalidProblem("grid too large".into()))?;
        Ok(Self { n, n_out, epsilon, resolution, interpolation, values: vec![0.0; count], lipschitz_estimate: 0.0 })
    }

    /// Grid with the given node values; the origin node is reset to zero.
    pub fn from_values(
        n: usize,
        n_out: usize,
        epsilon: f64,
        resolution: usize,
        interpolation: Interpolation,
        values: Vec<f64>,
    ) -> Result<Self> {
        let mut grid = Self::zeros(n, n_out, epsilon, resolution, interpolation)?;
        if values.len() != grid.values.len() {
            return Err(Error::Dimension(format!("expected {} grid values, got {}", grid.values.len(), values.len())));
        }
        grid.values = values;
        grid.pin_origin();
        grid.update_lipschitz();
        Ok(grid)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn interpolation(&self) -> Interpolation {
        self.interpolation
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node_count(&self) -> usize {
        self.values.len() / self.n_out
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.epsilon / (self.resolution - 1) as f64
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        if 2 * i + 1 == self.resolution {
            0.0
        } else {
            -self.epsilon + i as f64 * self.spacing()
        }
    }

    pub fn multi_index(&self, flat: usize) -> Vec<usize> {
        let mut idx = vec![0; self.n];
        let mut rest = flat;
        for d in (0..self.n).rev() {
            idx[d] = rest % self.resolution;
            rest /= self.resolution;
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.resolution + i)
    }

    pub fn node(&self, flat: usize) -> Vector {
        Vector::from_iterator(self.n, self.multi_index(flat).into_iter().map(|i| self.coordinate(i)))
    }

    pub fn origin_index(&self) -> usize {
        self.flat_index(&vec![self.resolution / 2; self.n])
    }

    pub fn at_node(&self, flat: usize) -> &[f64] {
        &self.values[flat * self.n_out..(flat + 1) * self.n_out]
    }

    pub fn set_node(&mut self, flat: usize, value: &[f64]) {
        self.values[flat * self.n_out..(flat + 1) * self.n_out].copy_from_slice(value);
    }

    pub fn pin_origin(&mut self) {
        let o = self.origin_index();
        self.set_node(o, &vec![0.0; self.n_out]);
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let limit = self.epsilon * (1.0 + 1e-12);
        x.iter().all(|v| v.abs() <= limit)
    }

    /// Interpolated value; points outside the cube are extrapolated with the
    /// boundary stencil.
    pub fn eval(&self, x: &[f64]) -> Vector {
        assert_eq!(x.len(), self.n, "grid evaluation point has wrong dimension");
        let k = self.interpolation.stencil();
        let h = self.spacing();
        let axes: Vec<(usize, [f64; 4])> = x
            .iter()
            .map(|&xi| {
                let t = (xi + self.epsilon) / h;
                // snap rounding noise so node coordinates hit their node exactly
                let t = if (t - t.round()).abs() < 1e-12 { t.round() } else { t };
                self.interpolation.weights(t, self.resolution)
            })
            .collect();
        let mut out = Vector::zeros(self.n_out);
        let mut offs = vec![0usize; self.n];
        'outer: loop {
            let mut w = 1.0;
            let mut flat = 0;
            for d in 0..self.n {
                w *= axes[d].1[offs[d]];
                flat = flat * self.resolution + axes[d].0 + offs[d];
            }
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(self.at_node(flat)) {
                    *o += w * v;
                }
            }
            for d in (0..self.n).rev() {
                offs[d] += 1;
                if offs[d] < k {
                    continue 'outer;
                }
                offs[d] = 0;
            }
            break;
        }
        out
    }

    /// Largest difference over nodes, in the Euclidean norm of each node value.
    pub fn sup_distance(&self, other: &GridFn) -> f64 {
        assert_eq!(self.values.len(), other.values.len(), "grids differ in shape");
        self.values
            .chunks(self.n_out)
            .zip(other.values.chunks(self.n_out))
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.chunks(self.n_out).map(|a| a.iter().map(|p| p * p).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// Recomputes the largest |value difference| / spacing over axis-adjacent node pairs.
    pub fn update_lipschitz(&mut self) {
        let h = self.spacing();
        let mut best = 0.0_f64;
        for flat in 0..self.node_count() {
            let idx = self.multi_index(flat);
            for d in 0..self.n {
                if idx[d] + 1 == self.resolution {
                    continue;
                }
                let mut nb = idx.clone();
                nb[d] += 1;
                let a = self.at_node(flat);
                let b = self.at_node(self.flat_index(&nb));
                let diff = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
                best = best.max(diff / h);
            }
        }
        self.lipschitz_estimate = best;
    }
}
