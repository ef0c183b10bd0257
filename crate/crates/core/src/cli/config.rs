//! Run configuration: a TOML file with `[problem]`, `[grid]`, `[tolerances]`,
//! `[oracle]`, `[checks]` and `[outputs]` sections and a top-level `stages` list.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dpe::OracleOptions;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::manifold::{Interpolation, MAX_GRID_DIM};
use crate::model::{validate_problem, MonomialTerm, PolyMap, Problem};
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validate,
    Riccati,
    Spectral,
    Manifold,
    Dpe,
    Oracle,
}

impl Stage {
    pub const ALL: [Stage; 6] =
        [Stage::Validate, Stage::Riccati, Stage::Spectral, Stage::Manifold, Stage::Dpe, Stage::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Riccati => "riccati",
            Stage::Spectral => "spectral",
            Stage::Manifold => "manifold",
            Stage::Dpe => "dpe",
            Stage::Oracle => "oracle",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.name() == name.trim())
            .ok_or_else(|| Error::Config(format!("unknown stage '{name}'")))
    }

    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::Validate | Stage::Riccati | Stage::Spectral => &[],
            Stage::Manifold => &[Stage::Riccati, Stage::Spectral],
            Stage::Dpe => &[Stage::Manifold],
            Stage::Oracle => &[Stage::Riccati],
        }
    }
}

fn default_stages() -> Vec<Stage> {
    vec![Stage::Validate, Stage::Riccati, Stage::Spectral, Stage::Manifold, Stage::Dpe]
}

/// Sorts stages into dependency order and checks every prerequisite is present.
pub fn normalize_stages(stages: &[Stage]) -> Result<Vec<Stage>> {
    let mut out = stages.to_vec();
    out.sort();
    out.dedup();
    for s in &out {
        for dep in s.requires() {
            if !out.contains(dep) {
                return Err(Error::Config(format!("stage '{}' requires stage '{}'", s.name(), dep.name())));
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermConfig {
    /// Output component the term contributes to (always 0 for the cost).
    #[serde(default)]
    pub component: usize,
    pub coeff: f64,
    pub x_exp: Vec<u32>,
    #[serde(default)]
    pub u_exp: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub f_terms: Vec<TermConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub l_terms: Vec<TermConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub resolution: usize,
    pub epsilon: f64,
    pub interpolation: Interpolation,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { resolution: 41, epsilon: 0.1, interpolation: Interpolation::Cubic }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksConfig {
    /// Random points per sampled check.
    pub samples: usize,
    /// Random tangent pairs for the two-form check.
    pub tangent_pairs: usize,
    pub tangent_steps: usize,
    /// Sampled rollouts exported to trajectories.csv.
    pub rollouts: usize,
    pub seed: u64,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self { samples: 100, tangent_pairs: 50, tangent_steps: 20, rollouts: 5, seed: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_stages")]
    pub stages: Vec<Stage>,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub oracle: OracleOptions,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub outputs: OutputsConfig,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(Error::Config(format!("problem.{name} must be a non-empty array of rows")));
    }
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Config(format!("problem.{name} has rows of different lengths")));
    }
    Ok(Mat::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

fn poly(name: &str, terms: &[TermConfig], n: usize, m: usize, n_out: usize) -> Result<PolyMap> {
    let mut components = vec![Vec::new(); n_out];
    for t in terms {
        let slot = components.get_mut(t.component).ok_or_else(|| {
            Error::Config(format!("problem.{name}: component {} out of range 0..{n_out}", t.component))
        })?;
        let u_exp = if t.u_exp.is_empty() { vec![0; m] } else { t.u_exp.clone() };
        slot.push(MonomialTerm::new(t.coeff, t.x_exp.clone(), u_exp));
    }
    PolyMap::new(n, m, components).map_err(|e| Error::Config(format!("problem.{name}: {e}")))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The problem described by the config, on a grid of radius `grid.epsilon`.
    pub fn problem(&self) -> Result<Problem> {
        let p = &self.problem;
        let a = matrix("a", &p.a)?;
        let b = matrix("b", &p.b)?;
        let q = matrix("q", &p.q)?;
        let r = matrix("r", &p.r)?;
        let (n, m) = (a.nrows(), b.ncols());
        let s = match &p.s {
            Some(rows) => matrix("s", rows)?,
            None => Mat::zeros(n, m),
        };
        let f_nl = poly("f_terms", &p.f_terms, n, m, n)?;
        let l_nl = poly("l_terms", &p.l_terms, n, m, 1)?;
        Problem::new(a, b, q, r, s, f_nl, l_nl, self.grid.epsilon).map_err(|e| Error::Config(e.to_string()))
    }

    /// Semantic checks: the problem builds and satisfies its structural
    /// invariants, the stage list is closed under prerequisites and the grid is usable.
    pub fn check(&self) -> Result<()> {
        let prob = self.problem()?;
        let report = validate_problem(&prob, self.tolerances.rank);
        if let Some(f) = report.structural_failures().next() {
            return Err(Error::Config(format!("invariant violated: {} ({f:?})", f.invariant())));
        }
        let stages = normalize_stages(&self.stages)?;
        if stages.contains(&Stage::Manifold) && prob.n() > MAX_GRID_DIM {
            return Err(Error::Config(format!("manifold stage supports n <= {MAX_GRID_DIM}, got {}", prob.n())));
        }
        if self.grid.resolution.is_multiple_of(2) || self.grid.resolution < 5 {
            return Err(Error::Config(format!("grid.resolution must be odd and >= 5, got {}", self.grid.resolution)));
        }
        Ok(())
    }
}

/// Reads and validates a config file; syntax errors carry line and column.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_toml_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
