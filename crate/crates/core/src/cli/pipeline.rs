//! Stage orchestration and the aggregated report.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{normalize_stages, RunConfig, Stage};
use crate::dpe::{self, CostField, ManifoldValue, OracleResult};
use crate::error::{Error, Result};
use crate::linalg::{self, Mat, Vector};
use crate::manifold::{
    self, closedness_check, invariance_check, rollout, solve_manifold, GridOptions, HorizonPolicy, ManifoldSolution,
    Trajectory,
};
use crate::model::{eliminate_cross_term, validate_problem, Problem, ValidationReport};
use crate::pmp::BidirectionalPoint;
use crate::riccati::{solve_dtare, StabilizingSolution};
use crate::spectral::{
    invariance_defect, pencil_eigenvalues, propagate_tangent, reciprocity_check, EigenKind, ReciprocityReport,
};

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Passed,
    Failed,
    /// A prerequisite did not pass.
    Skipped,
    /// The stage aborted with an error.
    Error,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageOutcome {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    /// Whether an error was caused by the input rather than by the numerics.
    #[serde(skip)]
    pub input_error: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub stage: Stage,
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RiccatiSummary {
    pub p: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub alpha: f64,
    pub closed_loop_spectrum: Vec<[f64; 2]>,
    pub lyapunov_m: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenSummary {
    pub kind: EigenKind,
    /// Real and imaginary part; absent for infinite eigenvalues.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<EigenSummary>,
    pub zero_count: usize,
    pub infinite_count: usize,
    pub reciprocity: ReciprocityReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stable_graph: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ManifoldSummary {
    pub epsilon: f64,
    pub resolution: usize,
    pub halvings: usize,
    pub contraction_estimate: f64,
    pub iteration_count: usize,
    pub residual_history: Vec<f64>,
    pub truncation_horizon: usize,
    pub fixed_point_residual: f64,
    pub psi_sup: f64,
    pub lipschitz: manifold::LipschitzReport,
    pub closedness: manifold::ClosednessReport,
    pub invariance: manifold::InvarianceReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct DpeSummary {
    pub residuals: dpe::DpeReport,
    pub path_independence: f64,
    pub gradient_consistency: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub half_width: f64,
    pub sweeps: usize,
    pub final_change: f64,
    pub monotone: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_gap: Option<f64>,
}

/// Everything written to results.json.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub config: RunConfig,
    pub stages: Vec<StageOutcome>,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub validation: Option<ValidationReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub riccati: Option<RiccatiSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectral: Option<SpectralSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub manifold: Option<ManifoldSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dpe: Option<DpeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSummary>,
    pub passed: bool,
}

impl Report {
    /// 0 pass, 1 check failure, 2 input error, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        if self.stages.iter().any(|s| s.status == StageStatus::Error && s.input_error) {
            2
        } else if self.stages.iter().any(|s| s.status == StageStatus::Error) {
            3
        } else if self.passed {
            0
        } else {
            1
        }
    }
}

/// The report plus the grid data exported next to it.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub report: Report,
    pub manifold: Option<ManifoldSolution>,
    pub cost: Option<CostField>,
    pub oracle: Option<OracleResult>,
    pub trajectories: Vec<Trajectory>,
}

struct Run<'a> {
    cfg: &'a RunConfig,
    prob: Problem,
    checks: Vec<Check>,
    riccati: Option<StabilizingSolution>,
    out: PipelineOutput,
}

impl Run<'_> {
    fn check(&mut self, stage: Stage, name: &str, value: f64, threshold: f64, passed: bool) -> bool {
        self.checks.push(Check { stage, name: name.to_string(), value, threshold, passed });
        passed
    }

    /// value <= threshold
    fn bound(&mut self, stage: Stage, name: &str, value: f64, threshold: f64) -> bool {
        self.check(stage, name, value, threshold, value <= threshold)
    }

    fn flag(&mut self, stage: Stage, name: &str, ok: bool) -> bool {
        self.check(stage, name, if ok { 1.0 } else { 0.0 }, 1.0, ok)
    }

    fn validate(&mut self) -> Result<bool> {
        let report = validate_problem(&self.prob, self.cfg.tolerances.rank);
        let names = ["(A,B) stabilizable", "(A,Q^(1/2)) detectable"];
        let mut ok = true;
        for name in names {
            let pass = !report.failures.iter().any(|f| f.invariant() == name);
            ok &= self.flag(Stage::Validate, name, pass);
        }
        ok &= self.flag(Stage::Validate, "structural invariants", report.structural_failures().next().is_none());
        self.out.report.validation = Some(report);
        Ok(ok)
    }

    fn riccati(&mut self) -> Result<bool> {
        let tol = &self.cfg.tolerances;
        let sol = match solve_dtare(&self.prob, tol) {
            Ok(s) => s,
            Err(Error::NotHyperbolic(msg)) => {
                self.flag(Stage::Riccati, "closed loop stable", false);
                log::warn!("riccati: {msg}");
                return Ok(false);
            }
            Err(e) => return Err(e),
        };
        let scale = 1.0 + linalg::max_abs(&sol.p);
        let mut ok = self.bound(Stage::Riccati, "dtare residual", sol.residual, tol.dtare_residual * scale);
        ok &= self.check(
            Stage::Riccati,
            "closed loop stable",
            sol.alpha,
            1.0 - tol.closed_loop_margin,
            sol.alpha < 1.0 - tol.closed_loop_margin,
        );
        let acl = sol.closed_loop(&self.prob);
        let n = self.prob.n();
        let lyap = linalg::max_abs(&(acl.transpose() * &sol.lyapunov_m * &acl - &sol.lyapunov_m + Mat::identity(n, n)));
        ok &= self.bound(
            Stage::Riccati,
            "lyapunov residual",
            lyap,
            tol.lyapunov_residual * (1.0 + linalg::max_abs(&sol.lyapunov_m)),
        );
        self.out.report.riccati = Some(RiccatiSummary {
            p: rows(&sol.p),
            k: rows(&sol.k),
            alpha: sol.alpha,
            closed_loop_spectrum: sol.closed_loop_spectrum.iter().map(|z| [z.re, z.im]).collect(),
            lyapunov_m: rows(&sol.lyapunov_m),
            iterations: sol.iterations,
            residual: sol.residual,
        });
        self.riccati = Some(sol);
        Ok(ok)
    }

    fn spectral(&mut self) -> Result<bool> {
        let tol = self.cfg.tolerances.clone();
        let work = eliminate_cross_term(&self.prob)?;
        let spec = pencil_eigenvalues(&work, &tol)?;
        let rec = reciprocity_check(&spec, &tol);
        let mut ok = self.flag(Stage::Spectral, "hyperbolic", rec.hyperbolic());
        ok &= self.flag(Stage::Spectral, "reciprocal spectrum", rec.passed());
        ok &= self.bound(Stage::Spectral, "eigen residual", crate::spectral::eigen_residual(&spec), tol.eigen_residual);
        let mut graph = None;
        if rec.hyperbolic() {
            if let Some(ric) = &self.riccati {
                let g = spec.stable_graph()?;
                let mismatch = linalg::max_abs(&(&g - &ric.p)) / linalg::max_abs(&ric.p).max(f64::MIN_POSITIVE);
                ok &= self.bound(Stage::Spectral, "stable subspace graph vs P", mismatch, tol.stable_subspace);
                graph = Some(rows(&g));
            }
            let base = vec![BidirectionalPoint::origin(work.n()); self.cfg.checks.tangent_steps];
            let defect = self.two_form_defect(&work, &base)?;
            ok &= self.bound(Stage::Spectral, "two-form drift at origin", defect, tol.symplectic);
        }
        self.out.report.spectral = Some(SpectralSummary {
            eigenvalues: spec
                .eigenvalues
                .iter()
                .map(|e| EigenSummary {
                    kind: e.kind,
                    mu: (e.kind != EigenKind::Infinite).then_some([e.mu.re, e.mu.im]),
                })
                .collect(),
            zero_count: spec.zero_count,
            infinite_count: spec.infinite_count,
            reciprocity: rec,
            stable_graph: graph,
        });
        Ok(ok)
    }

    fn two_form_defect(&self, prob: &Problem, base: &[BidirectionalPoint]) -> Result<f64> {
        let n = prob.n();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.checks.seed);
        let mut random = || Vector::from_fn(n, |_, _| rng.gen_range(-1.0..=1.0));
        let mut worst = 0.0_f64;
        for _ in 0..self.cfg.checks.tangent_pairs {
            let v = propagate_tangent(prob, base, &random(), &random(), &self.cfg.tolerances)?;
            let w = propagate_tangent(prob, base, &random(), &random(), &self.cfg.tolerances)?;
            worst = worst.max(invariance_defect(&v, &w));
        }
        Ok(worst)
    }

    fn manifold(&mut self) -> Result<bool> {
        let tol = self.cfg.tolerances.clone();
        let checks = self.cfg.checks;
        let grid = GridOptions { resolution: self.cfg.grid.resolution, interpolation: self.cfg.grid.interpolation };
        let sol = solve_manifold(&self.prob, &grid, &tol)?;
        let mut ok = self.check(
            Stage::Manifold,
            "contraction estimate",
            sol.contraction_estimate,
            1.0,
            sol.contraction_estimate < 1.0,
        );
        ok &= self.bound(
            Stage::Manifold,
            "fixed-point certificate",
            sol.fixed_point_residual,
            tol.fixed_point_certificate,
        );
        ok &= self.bound(Stage::Manifold, "lipschitz estimate vs budget", sol.lipschitz.l_hat, sol.lipschitz.budget);
        let closed = closedness_check(&sol);
        ok &= self.bound(Stage::Manifold, "curl of phi", closed.max_curl, closed.threshold);
        let inv = invariance_check(&sol, checks.samples, checks.seed)?;
        ok &= self.bound(Stage::Manifold, "invariance residual", inv.max_residual, tol.invariance);
        let h = sol.psi.spacing();
        let n = sol.psi.n();
        let mut slope = 0.0_f64;
        for d in 0..n {
            let mut e = Vector::zeros(n);
            e[d] = h;
            let diff = (sol.psi.eval(e.as_slice()) - sol.psi.eval((-&e).as_slice())) / (2.0 * h);
            slope = slope.max(diff.amax());
        }
        ok &= self.bound(Stage::Manifold, "psi slope at origin", slope, tol.psi_slope);

        let starts = dpe::ball_samples(n, 0.5 * sol.epsilon(), checks.rollouts, checks.seed);
        let mut trajectories = Vec::with_capacity(starts.len());
        for x0 in &starts {
            trajectories.push(rollout(&sol.context, &sol.psi, x0, HorizonPolicy::UntilSmall)?);
        }
        if let Some(first) = starts.first() {
            let tr = rollout(&sol.context, &sol.psi, first, HorizonPolicy::Fixed(checks.tangent_steps + 1))?;
            let base: Vec<BidirectionalPoint> = tr
                .states
                .windows(2)
                .map(|w| {
                    let lp = sol.p() * &w[1] + sol.psi.eval(w[1].as_slice());
                    BidirectionalPoint::new(w[0].clone(), lp)
                })
                .take(checks.tangent_steps)
                .collect();
            let defect = self.two_form_defect(&sol.context.problem, &base)?;
            ok &= self.bound(Stage::Manifold, "two-form drift along manifold", defect, tol.symplectic);
        }
        self.out.report.manifold = Some(ManifoldSummary {
            epsilon: sol.epsilon(),
            resolution: sol.psi.resolution(),
            halvings: sol.halvings,
            contraction_estimate: sol.contraction_estimate,
            iteration_count: sol.iteration_count,
            residual_history: sol.residual_history.clone(),
            truncation_horizon: sol.truncation_horizon,
            fixed_point_residual: sol.fixed_point_residual,
            psi_sup: sol.psi.sup_norm(),
            lipschitz: sol.lipschitz,
            closedness: closed,
            invariance: inv,
        });
        self.out.trajectories = trajectories;
        self.out.manifold = Some(sol);
        Ok(ok)
    }

    fn dpe(&mut self) -> Result<bool> {
        let tol = self.cfg.tolerances.clone();
        let checks = self.cfg.checks;
        let sol = self.out.manifold.as_ref().expect("dpe runs after manifold");
        let field = dpe::cost_field(&self.prob, sol)?;
        let samples = dpe::ball_samples(sol.psi.n(), 0.5 * sol.epsilon(), checks.samples, checks.seed);
        let value = ManifoldValue { problem: &self.prob, solution: sol };
        let residuals = dpe::dpe_residual(&self.prob, &value, &samples, &tol)?;
        let few = &samples[..samples.len().min(50)];
        let path = dpe::path_independence(sol, few)?;
        let interior = dpe::ball_samples(sol.psi.n(), 0.5 * sol.epsilon(), few.len(), checks.seed + 1);
        let grad = dpe::gradient_consistency(sol, &interior)?;
        let pi_min = field.pi.values().iter().copied().fold(f64::INFINITY, f64::min);
        let mut ok = self.bound(Stage::Dpe, "dpe residual r1", residuals.r1_max, tol.dpe_residual);
        ok &= self.bound(Stage::Dpe, "dpe residual r2", residuals.r2_max, tol.dpe_residual);
        ok &= self.bound(Stage::Dpe, "path independence", path, tol.path_independence);
        ok &= self.bound(Stage::Dpe, "gradient consistency", grad, tol.gradient_consistency);
        ok &= self.check(Stage::Dpe, "cost nonnegative", pi_min, 0.0, pi_min >= 0.0);
        self.out.report.dpe = Some(DpeSummary { residuals, path_independence: path, gradient_consistency: grad });
        self.out.cost = Some(field);
        Ok(ok)
    }

    fn oracle(&mut self) -> Result<bool> {
        let tol = self.cfg.tolerances.clone();
        let oracle = dpe::value_iteration_oracle(&self.prob, &self.cfg.oracle, &tol)?;
        let mut ok = self.flag(Stage::Oracle, "monotone sweeps", oracle.monotone);
        let (mut cost_gap, mut policy_gap) = (None, None);
        if let Some(sol) = &self.out.manifold {
            let radius = oracle.field.pi.epsilon().min(sol.epsilon());
            let gap = dpe::oracle_gap(sol, &oracle, radius)?;
            let kappa = &oracle.field.kappa;
            let mut worst = 0.0_f64;
            for i in 0..kappa.node_count() {
                let x = kappa.node(i);
                if x.amax() > radius {
                    continue;
                }
                let u = dpe::feedback_at(&self.prob, sol, &x)?;
                worst = worst.max((u - Vector::from_column_slice(kappa.at_node(i))).amax());
            }
            ok &= self.bound(Stage::Oracle, "cost vs value iteration", gap, tol.oracle_cost);
            ok &= self.bound(Stage::Oracle, "feedback vs value iteration", worst, 2.0 * oracle.control_step);
            cost_gap = Some(gap);
            policy_gap = Some(worst);
        }
        self.out.report.oracle = Some(OracleSummary {
            half_width: oracle.field.pi.epsilon(),
            sweeps: oracle.sweeps,
            final_change: oracle.final_change,
            monotone: oracle.monotone,
            cost_gap,
            policy_gap,
        });
        self.out.oracle = Some(oracle);
        Ok(ok)
    }
}

/// Runs the configured stages in dependency order. A stage whose
/// prerequisites did not pass is skipped; errors are recorded, not returned.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    let stages = normalize_stages(&cfg.stages)?;
    let prob = cfg.problem()?;
    let report = Report {
        config: cfg.clone(),
        stages: Vec::new(),
        checks: Vec::new(),
        validation: None,
        riccati: None,
        spectral: None,
        manifold: None,
        dpe: None,
        oracle: None,
        passed: false,
    };
    let mut run = Run {
        cfg,
        prob,
        checks: Vec::new(),
        riccati: None,
        out: PipelineOutput { report, manifold: None, cost: None, oracle: None, trajectories: Vec::new() },
    };
    let mut outcomes: Vec<StageOutcome> = Vec::new();
    for stage in stages {
        let blocked = stage
            .requires()
            .iter()
            .any(|dep| outcomes.iter().any(|o| o.stage == *dep && o.status != StageStatus::Passed));
        if blocked {
            outcomes.push(StageOutcome { stage, status: StageStatus::Skipped, message: None, input_error: false });
            continue;
        }
        log::info!("running stage {}", stage.name());
        let result = match stage {
            Stage::Validate => run.validate(),
            Stage::Riccati => run.riccati(),
            Stage::Spectral => run.spectral(),
            Stage::Manifold => run.manifold(),
            Stage::Dpe => run.dpe(),
            Stage::Oracle => run.oracle(),
        };
        let outcome = match result {
            Ok(true) => StageOutcome { stage, status: StageStatus::Passed, message: None, input_error: false },
            Ok(false) => StageOutcome { stage, status: StageStatus::Failed, message: None, input_error: false },
            Err(e) => StageOutcome {
                stage,
                status: StageStatus::Error,
                input_error: e.is_input_error(),
                message: Some(e.to_string()),
            },
        };
        outcomes.push(outcome);
    }
    let mut out = run.out;
    out.report.passed = outcomes.iter().all(|o| o.status == StageStatus::Passed) && run.checks.iter().all(|c| c.passed);
    out.report.stages = outcomes;
    out.report.checks = run.checks;
    Ok(out)
}
