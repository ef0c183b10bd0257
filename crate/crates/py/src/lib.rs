//! Python bindings. Matrices cross the boundary as lists of rows, vectors as
//! lists of floats.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use dtsm::cli::{run_pipeline as run_core_pipeline, RunConfig};
use dtsm::dpe::{self, OracleOptions, OracleResult};
use dtsm::linalg::{Mat, Vector};
use dtsm::manifold::{self, GridOptions, Interpolation};
use dtsm::model::{MonomialTerm, PolyMap};
use dtsm::spectral::{self, EigenKind};
use dtsm::Tolerances;

fn py_err(e: dtsm::Error) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> PyResult<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!("{name} must be a non-empty rectangular list of rows")));
    }
    Ok(Mat::from_row_iterator(rows.len(), cols, rows.iter().flatten().copied()))
}

fn rows(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Terms are `(component, coeff, x_exponents, u_exponents)`.
type Term = (usize, f64, Vec<u32>, Vec<u32>);

fn poly(terms: &[Term], n: usize, m: usize, n_out: usize) -> PyResult<PolyMap> {
    let mut components = vec![Vec::new(); n_out];
    for (component, coeff, x_exp, u_exp) in terms {
        let slot = components
            .get_mut(*component)
            .ok_or_else(|| PyValueError::new_err(format!("term component {component} out of range 0..{n_out}")))?;
        slot.push(MonomialTerm::new(*coeff, x_exp.clone(), u_exp.clone()));
    }
    PolyMap::new(n, m, components).map_err(py_err)
}

fn vector(x: Vec<f64>, n: usize) -> PyResult<Vector> {
    if x.len() != n {
        return Err(PyValueError::new_err(format!("expected a point of length {n}, got {}", x.len())));
    }
    Ok(Vector::from_vec(x))
}

/// Optimal control problem with polynomial nonlinearities.
#[pyclass(name = "Problem", module = "dtsm", from_py_object)]
#[derive(Clone)]
struct PyProblem {
    inner: dtsm::Problem,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (a, b, q, r, s = None, f_terms = Vec::new(), l_terms = Vec::new(), epsilon = 0.1))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        q: Vec<Vec<f64>>,
        r: Vec<Vec<f64>>,
        s: Option<Vec<Vec<f64>>>,
        f_terms: Vec<Term>,
        l_terms: Vec<Term>,
        epsilon: f64,
    ) -> PyResult<Self> {
        let a = matrix("a", &a)?;
        let b = matrix("b", &b)?;
        let (n, m) = (a.nrows(), b.ncols());
        let s = match s {
            Some(s) => matrix("s", &s)?,
            None => Mat::zeros(n, m),
        };
        let f_nl = poly(&f_terms, n, m, n)?;
        let l_nl = poly(&l_terms, n, m, 1)?;
        let inner =
            dtsm::Problem::new(a, b, matrix("q", &q)?, matrix("r", &r)?, s, f_nl, l_nl, epsilon).map_err(py_err)?;
        let report = dtsm::model::validate_problem(&inner, Tolerances::default().rank);
        if let Some(f) = report.structural_failures().next() {
            return Err(PyValueError::new_err(format!("invariant violated: {}", f.invariant())));
        }
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.inner.m()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    /// Next state for state `x` and control `u`.
    fn dynamics(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.dynamics(&x, &u).map_err(py_err)?.iter().copied().collect())
    }

    fn stage_cost(&self, x: Vec<f64>, u: Vec<f64>) -> PyResult<f64> {
        self.inner.stage_cost(&x, &u).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!("Problem(n={}, m={}, epsilon={})", self.inner.n(), self.inner.m(), self.inner.epsilon)
    }
}

/// Stabilizing Riccati solution as a dict with keys p, k, alpha, residual, iterations.
#[pyfunction]
fn solve_dtare(py: Python<'_>, problem: &PyProblem) -> PyResult<Py<PyAny>> {
    let sol = dtsm::riccati::solve_dtare(&problem.inner, &Tolerances::default()).map_err(py_err)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("p", rows(&sol.p))?;
    d.set_item("k", rows(&sol.k))?;
    d.set_item("alpha", sol.alpha)?;
    d.set_item("residual", sol.residual)?;
    d.set_item("iterations", sol.iterations)?;
    Ok(d.into_any().unbind())
}

/// Pencil eigenvalues: finite ones as complex numbers plus zero and infinite
/// counts, the reciprocity verdict and the stable graph matrix when hyperbolic.
#[pyfunction]
fn pencil_eigenvalues(py: Python<'_>, problem: &PyProblem) -> PyResult<Py<PyAny>> {
    let tol = Tolerances::default();
    let work = dtsm::model::eliminate_cross_term(&problem.inner).map_err(py_err)?;
    let spec = spectral::pencil_eigenvalues(&work, &tol).map_err(py_err)?;
    let rec = spectral::reciprocity_check(&spec, &tol);
    let finite: Vec<num_complex::Complex<f64>> =
        spec.eigenvalues.iter().filter(|e| e.kind != EigenKind::Infinite).map(|e| e.mu).collect();
    let d = pyo3::types::PyDict::new(py);
    d.set_item("finite", finite)?;
    d.set_item("zero_count", spec.zero_count)?;
    d.set_item("infinite_count", spec.infinite_count)?;
    d.set_item("reciprocal", rec.passed())?;
    d.set_item("hyperbolic", rec.hyperbolic())?;
    let graph = if rec.hyperbolic() { Some(rows(&spec.stable_graph().map_err(py_err)?)) } else { None };
    d.set_item("stable_graph", graph)?;
    Ok(d.into_any().unbind())
}

/// Converged stable-manifold graph `lambda = P x + psi(x)` with the cost and
/// feedback it generates.
#[pyclass(name = "Manifold", module = "dtsm")]
struct PyManifold {
    problem: dtsm::Problem,
    sol: manifold::ManifoldSolution,
}

#[pymethods]
impl PyManifold {
    #[getter]
    fn epsilon(&self) -> f64 {
        self.sol.epsilon()
    }

    #[getter]
    fn contraction_estimate(&self) -> f64 {
        self.sol.contraction_estimate
    }

    #[getter]
    fn fixed_point_residual(&self) -> f64 {
        self.sol.fixed_point_residual
    }

    #[getter]
    fn iteration_count(&self) -> usize {
        self.sol.iteration_count
    }

    #[getter]
    fn p(&self) -> Vec<Vec<f64>> {
        rows(self.sol.p())
    }

    fn psi(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = vector(x, self.problem.n())?;
        Ok(self.sol.psi.eval(x.as_slice()).iter().copied().collect())
    }

    /// Costate on the manifold, `P x + psi(x)`.
    fn phi(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = vector(x, self.problem.n())?;
        Ok(manifold::phi_eval(&self.sol, &x).map_err(py_err)?.iter().copied().collect())
    }

    /// Optimal cost-to-go.
    fn cost(&self, x: Vec<f64>) -> PyResult<f64> {
        dpe::cost_at(&self.sol, &vector(x, self.problem.n())?).map_err(py_err)
    }

    /// Optimal feedback control.
    fn feedback(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = vector(x, self.problem.n())?;
        Ok(dpe::feedback_at(&self.problem, &self.sol, &x).map_err(py_err)?.iter().copied().collect())
    }

    /// Largest invariance residual over seeded random points of the eps/2 ball.
    #[pyo3(signature = (samples = 100, seed = 1))]
    fn invariance(&self, samples: usize, seed: u64) -> PyResult<f64> {
        Ok(manifold::invariance_check(&self.sol, samples, seed).map_err(py_err)?.max_residual)
    }

    /// Largest scaled dynamic programming residuals `(r1, r2)` over the eps/2 ball.
    #[pyo3(signature = (samples = 100, seed = 1))]
    fn dpe_residuals(&self, samples: usize, seed: u64) -> PyResult<(f64, f64)> {
        let pts = dpe::ball_samples(self.problem.n(), 0.5 * self.sol.epsilon(), samples, seed);
        let value = dpe::ManifoldValue { problem: &self.problem, solution: &self.sol };
        let rep = dpe::dpe_residual(&self.problem, &value, &pts, &Tolerances::default()).map_err(py_err)?;
        Ok((rep.r1_max, rep.r2_max))
    }

    /// Sup distance to a value-iteration cost over the cube of the given radius.
    fn oracle_gap(&self, oracle: &PyOracle, radius: f64) -> PyResult<f64> {
        dpe::oracle_gap(&self.sol, &oracle.inner, radius).map_err(py_err)
    }
}

#[pyfunction]
#[pyo3(signature = (problem, resolution = 41, interpolation = "cubic"))]
fn solve_manifold(py: Python<'_>, problem: &PyProblem, resolution: usize, interpolation: &str) -> PyResult<PyManifold> {
    let interpolation = match interpolation {
        "cubic" => Interpolation::Cubic,
        "multilinear" => Interpolation::Multilinear,
        other => return Err(PyValueError::new_err(format!("unknown interpolation '{other}'"))),
    };
    let prob = problem.inner.clone();
    let sol = py
        .detach(|| manifold::solve_manifold(&prob, &GridOptions { resolution, interpolation }, &Tolerances::default()))
        .map_err(py_err)?;
    Ok(PyManifold { problem: prob, sol })
}

/// Value-iteration cost and policy on a uniform state grid.
#[pyclass(name = "Oracle", module = "dtsm")]
struct PyOracle {
    inner: OracleResult,
}

#[pymethods]
impl PyOracle {
    #[getter]
    fn sweeps(&self) -> usize {
        self.inner.sweeps
    }

    #[getter]
    fn monotone(&self) -> bool {
        self.inner.monotone
    }

    fn cost(&self, x: Vec<f64>) -> f64 {
        self.inner.field.pi.eval(&x)[0]
    }

    fn policy(&self, x: Vec<f64>) -> Vec<f64> {
        self.inner.field.kappa.eval(&x).iter().copied().collect()
    }
}

#[pyfunction]
#[pyo3(signature = (problem, half_width = 0.1, state_step = 1e-3, control_step = 1e-3, control_bound = None))]
fn value_iteration(
    py: Python<'_>,
    problem: &PyProblem,
    half_width: f64,
    state_step: f64,
    control_step: f64,
    control_bound: Option<f64>,
) -> PyResult<PyOracle> {
    let opts = OracleOptions { half_width, state_step, control_step, control_bound };
    let prob = problem.inner.clone();
    let inner = py.detach(|| dpe::value_iteration_oracle(&prob, &opts, &Tolerances::default())).map_err(py_err)?;
    Ok(PyOracle { inner })
}

/// Runs the stages of a TOML run config. Returns `(exit_code, results_json)`.
#[pyfunction]
fn run_pipeline(py: Python<'_>, config: &str) -> PyResult<(i32, String)> {
    let cfg = RunConfig::from_toml_str(config).map_err(py_err)?;
    let out = py.detach(|| run_core_pipeline(&cfg)).map_err(py_err)?;
    let json = serde_json::to_string_pretty(&out.report).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((out.report.exit_code(), json))
}

#[pymodule]
#[pyo3(name = "dtsm")]
fn dtsm_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PyManifold>()?;
    m.add_class::<PyOracle>()?;
    m.add_function(wrap_pyfunction!(solve_dtare, m)?)?;
    m.add_function(wrap_pyfunction!(pencil_eigenvalues, m)?)?;
    m.add_function(wrap_pyfunction!(solve_manifold, m)?)?;
    m.add_function(wrap_pyfunction!(value_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    Ok(())
}
