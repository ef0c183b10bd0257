//! Sparse multivariate polynomial maps in (x, u).
//!
//! Every term is a monomial of total degree >= 2, so a `PolyMap` vanishes to
//! second order at the origin. Evaluation returns exact monomial sums together
//! with analytic first and second derivatives.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonomialTerm {
    pub coeff: f64,
    pub x_exp: Vec<u32>,
    #[serde(default)]
    pub u_exp: Vec<u32>,
}

impl MonomialTerm {
    pub fn new(coeff: f64, x_exp: Vec<u32>, u_exp: Vec<u32>) -> Self {
        Self { coeff, x_exp, u_exp }
    }

    pub fn degree(&self) -> u32 {
        self.x_exp.iter().chain(&self.u_exp).sum()
    }
}

/// A monomial with its nonzero exponents indexed over the stacked variable z = (x, u).
#[derive(Debug, Clone, PartialEq)]
struct Packed {
    coeff: f64,
    support: Vec<(usize, u32)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyMap {
    n_x: usize,
    n_u: usize,
    components: Vec<Vec<MonomialTerm>>,
    packed: Vec<Vec<Packed>>,
}

/// Value and derivatives of a `PolyMap` at one point. Derivatives are with
/// respect to the stacked variable z = (x, u).
#[derive(Debug, Clone)]
pub struct PolyEval {
    pub value: Vec<f64>,
    pub jacobian: Mat,
    /// One (n_x + n_u) square Hessian per output component; empty unless requested.
    pub hessians: Vec<Mat>,
}

impl PolyMap {
    pub fn new(n_x: usize, n_u: usize, components: Vec<Vec<MonomialTerm>>) -> Result<Self> {
        let mut kept = Vec::with_capacity(components.len());
        for (k, comp) in components.into_iter().enumerate() {
            let mut terms = Vec::new();
            for t in comp {
                if t.x_exp.len() != n_x || t.u_exp.len() != n_u {
                    return Err(Error::Dimension(format!(
                        "term in component {k} has exponent lengths ({}, {}), expected ({n_x}, {n_u})",
                        t.x_exp.len(),
                        t.u_exp.len()
                    )));
                }
                if !t.coeff.is_finite() {
                    return Err(Error::InvalidProblem(format!("non-finite coefficient in component {k}")));
                }
                if t.coeff == 0.0 {
                    continue;
                }
                if t.degree() < 2 {
                    return Err(Error::InvalidProblem(format!(
                        "nonlinear term in component {k} has degree {} < 2",
                        t.degree()
                    )));
                }
                terms.push(t);
            }
            kept.push(terms);
        }
        let packed = kept.iter().map(|comp| comp.iter().map(pack).collect()).collect();
        Ok(Self { n_x, n_u, components: kept, packed })
    }

    pub fn zero(n_x: usize, n_u: usize, n_out: usize) -> Self {
        Self { n_x, n_u, components: vec![Vec::new(); n_out], packed: vec![Vec::new(); n_out] }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_out(&self) -> usize {
        self.components.len()
    }

    pub fn components(&self) -> &[Vec<MonomialTerm>] {
        &self.components
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|c| c.is_empty())
    }

    fn check_dims(&self, x: &[f64], u: &[f64]) -> Result<()> {
        if x.len() != self.n_x || u.len() != self.n_u {
            return Err(Error::Dimension(format!(
                "polynomial expects x of length {} and u of length {}, got {} and {}",
                self.n_x,
                self.n_u,
                x.len(),
                u.len()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check_dims(x, u)?;
        let z = stack(x, u);
        Ok(self.packed.iter().map(|comp| comp.iter().map(|t| t.coeff * product(&t.support, &z)).sum()).collect())
    }

    /// Value and Jacobian, plus per-component Hessians when `second_order` is set.
    pub fn eval_derivatives(&self, x: &[f64], u: &[f64], second_order: bool) -> Result<PolyEval> {
        self.check_dims(x, u)?;
        let z = stack(x, u);
        let dim = z.len();
        let n_out = self.n_out();
        let mut value = vec![0.0; n_out];
        let mut jacobian = Mat::zeros(n_out, dim);
        let mut hessians = if second_order { vec![Mat::zeros(dim, dim); n_out] } else { Vec::new() };
        for (k, comp) in self.packed.iter().enumerate() {
            for t in comp {
                value[k] += t.coeff * product(&t.support, &z);
                for (a, &(i, ei)) in t.support.iter().enumerate() {
                    let di = ei as f64 * pow(z[i], ei - 1);
                    let rest = product_skip(&t.support, &z, &[a]);
                    jacobian[(k, i)] += t.coeff * di * rest;
                    if !second_order {
                        continue;
                    }
                    if ei >= 2 {
                        let ddi = (ei * (ei - 1)) as f64 * pow(z[i], ei - 2);
                        hessians[k][(i, i)] += t.coeff * ddi * rest;
                    }
                    for (b, &(j, ej)) in t.support.iter().enumerate().skip(a + 1) {
                        let dj = ej as f64 * pow(z[j], ej - 1);
                        let v = t.coeff * di * dj * product_skip(&t.support, &z, &[a, b]);
                        hessians[k][(i, j)] += v;
                        hessians[k][(j, i)] += v;
                    }
                }
            }
        }
        Ok(PolyEval { value, jacobian, hessians })
    }

    /// Rewrites the map for the control substitution u = v + C x, with C of shape n_u x n_x.
    pub fn substitute_control(&self, c: &Mat) -> Result<Self> {
        if c.nrows() != self.n_u || c.ncols() != self.n_x {
            return Err(Error::Dimension(format!(
                "control substitution must be {}x{}, got {}x{}",
                self.n_u,
                self.n_x,
                c.nrows(),
                c.ncols()
            )));
        }
        let dim = self.n_x + self.n_u;
        let mut out = Vec::with_capacity(self.n_out());
        for comp in &self.components {
            let mut acc = SparsePoly::new();
            for t in comp {
                let mut exps = t.x_exp.clone();
                exps.extend(std::iter::repeat_n(0, self.n_u));
                let mut p = SparsePoly::monomial(exps, t.coeff);
                for (j, &e) in t.u_exp.iter().enumerate() {
                    if e == 0 {
                        continue;
                    }
                    let mut lin = SparsePoly::new();
                    lin.add_unit(dim, self.n_x + j, 1.0);
                    for k in 0..self.n_x {
                        lin.add_unit(dim, k, c[(j, k)]);
                    }
                    for _ in 0..e {
                        p = p.mul(&lin);
                    }
                }
                acc.add(&p);
            }
            out.push(
                acc.terms
                    .into_iter()
                    .filter(|(_, coeff)| *coeff != 0.0)
                    .map(|(exps, coeff)| MonomialTerm::new(coeff, exps[..self.n_x].to_vec(), exps[self.n_x..].to_vec()))
                    .collect(),
            );
        }
        Self::new(self.n_x, self.n_u, out)
    }
}

fn pack(t: &MonomialTerm) -> Packed {
    let support = t.x_exp.iter().chain(&t.u_exp).enumerate().filter(|(_, e)| **e > 0).map(|(i, e)| (i, *e)).collect();
    Packed { coeff: t.coeff, support }
}

fn stack(x: &[f64], u: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(x.len() + u.len());
    z.extend_from_slice(x);
    z.extend_from_slice(u);
    z
}

#[inline]
fn pow(v: f64, e: u32) -> f64 {
    v.powi(e as i32)
}

fn product(support: &[(usize, u32)], z: &[f64]) -> f64 {
    support.iter().map(|&(i, e)| pow(z[i], e)).product()
}

fn product_skip(support: &[(usize, u32)], z: &[f64], skip: &[usize]) -> f64 {
    support.iter().enumerate().filter(|(a, _)| !skip.contains(a)).map(|(_, &(i, e))| pow(z[i], e)).product()
}

/// Exponent-keyed polynomial used only for the control substitution.
#[derive(Debug, Clone, Default)]
struct SparsePoly {
    terms: BTreeMap<Vec<u32>, f64>,
}

impl SparsePoly {
    fn new() -> Self {
        Self::default()
    }

    fn monomial(exps: Vec<u32>, coeff: f64) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(exps, coeff);
        Self { terms }
    }

    fn add_unit(&mut self, dim: usize, var: usize, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let mut exps = vec![0; dim];
        exps[var] = 1;
        *self.terms.entry(exps).or_insert(0.0) += coeff;
    }

    fn add(&mut self, other: &SparsePoly) {
        for (e, c) in &other.terms {
            *self.terms.entry(e.clone()).or_insert(0.0) += c;
        }
    }

    fn mul(&self, other: &SparsePoly) -> SparsePoly {
        let mut out = SparsePoly::new();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &other.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *out.terms.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        out
    }
}
