//! Python bindings: the main types and operations of the grouptest crate as
//! an extension module.
//!
//! Usage from Python:
//!
//!     import grouptest_py as gt
//!     model = gt.ModelSpec("traditional")
//!     p, t = gt.optimize_p(model, k=10, n=1000, eps1=0.01, eps2=0.01)
//!     design = gt.build_design(model, 10, 1000, 0.01, 0.01, p=p)
//!     report = gt.simulate(design, runs=1000, seed=42)

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use grouptest::{design, models, scores, sim, stats};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py_err(e: grouptest::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Outcome model plus its noise / threshold parameters.
#[pyclass(name = "ModelSpec", skip_from_py_object)]
#[derive(Clone)]
struct PyModelSpec {
    inner: models::ModelSpec,
}

#[pymethods]
impl PyModelSpec {
    /// kind: traditional|dilution|additive|majority|bernoulli|linear|unknown
    #[new]
    #[pyo3(signature = (kind, r=0.0, q=0.5, lower=None, upper=None))]
    fn new(kind: &str, r: f64, q: f64, lower: Option<u64>, upper: Option<u64>) -> PyResult<Self> {
        let kind: models::ModelKind = kind.parse().map_err(to_py_err)?;
        let inner = models::ModelSpec { kind, r, q, lower, upper };
        Ok(PyModelSpec { inner })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.name()
    }

    #[getter]
    fn r(&self) -> f64 {
        self.inner.r
    }

    #[getter]
    fn q(&self) -> f64 {
        self.inner.q
    }

    /// P(y = 1 | beta included defectives) for a population of k defectives.
    fn outcome_probability(&self, beta: u64, k: u64) -> PyResult<f64> {
        self.inner.outcome_probability(beta, k).map_err(to_py_err)
    }

    /// Draws one outcome bit with a fresh seeded generator.
    fn sample_outcome(&self, beta: u64, k: u64, seed: u64) -> PyResult<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.inner.sample_outcome(beta, k, &mut rng).map_err(to_py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "ModelSpec(kind='{}', r={}, q={})",
            self.inner.kind.name(),
            self.inner.r,
            self.inner.q
        )
    }
}

/// The four score values h(x, y) plus the elimination flag.
#[pyclass(name = "ScoreTable", skip_from_py_object)]
#[derive(Clone)]
struct PyScoreTable {
    inner: scores::ScoreTable,
}

#[pymethods]
impl PyScoreTable {
    #[getter]
    fn h00(&self) -> f64 {
        self.inner.h00
    }

    #[getter]
    fn h01(&self) -> f64 {
        self.inner.h01
    }

    #[getter]
    fn h10(&self) -> f64 {
        self.inner.h10
    }

    #[getter]
    fn h11(&self) -> f64 {
        self.inner.h11
    }

    #[getter]
    fn eliminate10(&self) -> bool {
        self.inner.eliminates_on_10
    }

    fn value(&self, x: bool, y: bool) -> f64 {
        self.inner.value(x, y)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "ScoreTable(h00={:.6}, h01={:.6}, h10={:.6}, h11={:.6}, eliminate10={})",
            self.inner.h00, self.inner.h01, self.inner.h10, self.inner.h11,
            self.inner.eliminates_on_10
        )
    }
}

/// Per-test score moments and the code-length constants A, B.
#[pyclass(name = "MomentSummary", skip_from_py_object)]
#[derive(Clone)]
struct PyMomentSummary {
    inner: stats::MomentSummary,
}

#[pymethods]
impl PyMomentSummary {
    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }

    #[getter]
    fn sigma2(&self) -> f64 {
        self.inner.sigma2
    }

    #[getter]
    fn mu_t(&self) -> f64 {
        self.inner.mu_t
    }

    #[getter]
    fn sigma2_t(&self) -> f64 {
        self.inner.sigma2_t
    }

    #[getter]
    fn a(&self) -> f64 {
        self.inner.a_const
    }

    #[getter]
    fn b(&self) -> f64 {
        self.inner.b_const
    }

    fn __repr__(&self) -> String {
        format!(
            "MomentSummary(mu={:.3e}, sigma2={:.6}, mu_t={:.6}, sigma2_t={:.6}, a={:.4}, b={:.4})",
            self.inner.mu, self.inner.sigma2, self.inner.mu_t, self.inner.sigma2_t,
            self.inner.a_const, self.inner.b_const
        )
    }
}

/// A complete runnable scheme (model, table, densities, T, Z).
#[pyclass(name = "Design", skip_from_py_object)]
#[derive(Clone)]
struct PyDesign {
    inner: stats::DesignParams,
}

#[pymethods]
impl PyDesign {
    #[getter]
    fn t(&self) -> u64 {
        self.inner.t
    }

    #[getter]
    fn z(&self) -> f64 {
        self.inner.z
    }

    #[getter]
    fn k(&self) -> u64 {
        self.inner.k
    }

    #[getter]
    fn n(&self) -> u64 {
        self.inner.n
    }

    #[getter]
    fn adaptive(&self) -> bool {
        self.inner.adaptive
    }

    /// The inclusion probability (uniform designs) or None.
    #[getter]
    fn p(&self) -> Option<f64> {
        match &self.inner.p {
            stats::InclusionProbs::Uniform(p) => Some(*p),
            stats::InclusionProbs::PerTest(_) => None,
        }
    }

    /// Per-test inclusion probabilities.
    #[getter]
    fn p_per_test(&self) -> Vec<f64> {
        (0..self.inner.t as usize).map(|i| self.inner.p.at(i)).collect()
    }

    #[getter]
    fn table(&self) -> PyScoreTable {
        PyScoreTable { inner: self.inner.table }
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Design(k={}, n={}, t={}, z={:.4}, adaptive={})",
            self.inner.k, self.inner.n, self.inner.t, self.inner.z, self.inner.adaptive
        )
    }
}

/// Aggregated Monte Carlo error-event estimate.
#[pyclass(name = "SimulationReport", skip_from_py_object)]
#[derive(Clone)]
struct PySimulationReport {
    inner: sim::SimulationReport,
}

#[pymethods]
impl PySimulationReport {
    #[getter]
    fn runs(&self) -> u64 {
        self.inner.runs
    }

    #[getter]
    fn fp_event_rate(&self) -> f64 {
        self.inner.fp_event_rate
    }

    #[getter]
    fn fn_event_rate(&self) -> f64 {
        self.inner.fn_event_rate
    }

    #[getter]
    fn wilson_ci_fp(&self) -> (f64, f64) {
        self.inner.wilson_ci_fp
    }

    #[getter]
    fn wilson_ci_fn(&self) -> (f64, f64) {
        self.inner.wilson_ci_fn
    }

    /// (seed, accused, missed, tests_used) per run.
    #[getter]
    fn per_run(&self) -> Vec<(u64, u64, u64, u64)> {
        self.inner
            .per_run
            .iter()
            .map(|r| (r.seed, r.accused, r.missed, r.tests_used))
            .collect()
    }

    fn within_budgets(&self, eps1: f64, eps2: f64, factor: f64) -> bool {
        self.inner.within_budgets(eps1, eps2, factor)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn __repr__(&self) -> String {
        format!(
            "SimulationReport(runs={}, fp_event_rate={:.4}, fn_event_rate={:.4})",
            self.inner.runs, self.inner.fp_event_rate, self.inner.fn_event_rate
        )
    }
}

/// Closed-form optimal score table.
#[pyfunction]
fn score_table(model: &PyModelSpec, k: u64, p: f64) -> PyResult<PyScoreTable> {
    scores::score_table(&model.inner, k, p)
        .map(|inner| PyScoreTable { inner })
        .map_err(to_py_err)
}

/// Derivative-based score table for arbitrary models.
#[pyfunction]
#[pyo3(signature = (model, k, p, step=scores::DEFAULT_FD_STEP))]
fn generic_score_table(model: &PyModelSpec, k: u64, p: f64, step: f64) -> PyResult<PyScoreTable> {
    scores::generic_score_table(&model.inner, k, p, step)
        .map(|inner| PyScoreTable { inner })
        .map_err(to_py_err)
}

/// Certain-exclusion variant of a table (traditional/additive only).
#[pyfunction]
fn finetune(table: &PyScoreTable, model: &PyModelSpec) -> PyResult<PyScoreTable> {
    scores::finetune(&table.inner, &model.inner)
        .map(|inner| PyScoreTable { inner })
        .map_err(to_py_err)
}

/// Exact per-test score moments.
#[pyfunction]
fn moments(model: &PyModelSpec, k: u64, p: f64, table: &PyScoreTable) -> PyResult<PyMomentSummary> {
    stats::moments(&model.inner, k, p, &table.inner)
        .map(|inner| PyMomentSummary { inner })
        .map_err(to_py_err)
}

/// (T, Z) for the one-shot scheme.
#[pyfunction]
fn code_length_nonadaptive(
    m: &PyMomentSummary,
    n: u64,
    k: u64,
    eps1: f64,
    eps2: f64,
) -> PyResult<(u64, f64)> {
    stats::code_length_nonadaptive(&m.inner, n, k, eps1, eps2).map_err(to_py_err)
}

/// (T, Z) for the sequential scheme.
#[pyfunction]
fn code_length_adaptive(
    m: &PyMomentSummary,
    n: u64,
    k: u64,
    eps1: f64,
    eps2: f64,
) -> PyResult<(u64, f64)> {
    stats::code_length_adaptive(&m.inner, n, k, eps1, eps2).map_err(to_py_err)
}

/// The error-budget ratio eta.
#[pyfunction]
#[pyo3(signature = (n, k, eps1, eps2, adaptive=false))]
fn eta(n: u64, k: u64, eps1: f64, eps2: f64, adaptive: bool) -> PyResult<f64> {
    stats::eta(n, k, eps1, eps2, adaptive).map_err(to_py_err)
}

/// Large-K leading term of the code length.
#[pyfunction]
#[pyo3(signature = (model, k, n, finetuned=false))]
fn asymptotic_code_length(model: &PyModelSpec, k: u64, n: u64, finetuned: bool) -> PyResult<f64> {
    stats::asymptotic_code_length(&model.inner, k, n, finetuned).map_err(to_py_err)
}

/// Minimizes the unrounded T over p; returns (p_star, t_star).
#[pyfunction]
#[pyo3(signature = (model, k, n, eps1, eps2, adaptive=false))]
fn optimize_p(
    model: &PyModelSpec,
    k: u64,
    n: u64,
    eps1: f64,
    eps2: f64,
    adaptive: bool,
) -> PyResult<(f64, f64)> {
    sim::optimize_p(&model.inner, k, n, eps1, eps2, adaptive).map_err(to_py_err)
}

/// Builds a complete runnable design (p omitted: optimize it; unknown model:
/// arcsine per-test densities).
#[pyfunction]
#[pyo3(signature = (model, k, n, eps1, eps2, p=None, adaptive=false, finetune=false, seed=0))]
#[allow(clippy::too_many_arguments)]
fn build_design(
    model: &PyModelSpec,
    k: u64,
    n: u64,
    eps1: f64,
    eps2: f64,
    p: Option<f64>,
    adaptive: bool,
    finetune: bool,
    seed: u64,
) -> PyResult<(PyDesign, PyMomentSummary)> {
    sim::build_design(&model.inner, k, n, eps1, eps2, p, adaptive, finetune, seed)
        .map(|(d, m)| (PyDesign { inner: d }, PyMomentSummary { inner: m }))
        .map_err(to_py_err)
}

/// Monte Carlo estimate of the per-run error event rates.
#[pyfunction]
fn simulate(py: Python<'_>, design: &PyDesign, runs: u64, seed: u64) -> PyResult<PySimulationReport> {
    let inner = design.inner.clone();
    py.detach(move || sim::simulate(&inner, runs, seed))
        .map(|inner| PySimulationReport { inner })
        .map_err(to_py_err)
}

/// T i.i.d. clipped arcsine draws.
#[pyfunction]
fn arcsine_p_sample(t: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sim::arcsine_p_sample(t, &mut rng)
}

/// Serialized test-matrix round trip (dump format check).
#[pyfunction]
fn matrix_dump_round_trip(n: usize, t: usize, p: f64, seed: u64) -> PyResult<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = design::generate_matrix(n, t, &stats::InclusionProbs::Uniform(p), &mut rng)
        .map_err(to_py_err)?;
    let mut buf = Vec::new();
    design::write_matrix(&m, &mut buf).map_err(to_py_err)?;
    let back = design::read_matrix(&buf[..]).map_err(to_py_err)?;
    Ok((0..n).all(|j| (0..t).all(|i| m.bit(j, i) == back.bit(j, i))))
}

#[pymodule]
fn grouptest_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelSpec>()?;
    m.add_class::<PyScoreTable>()?;
    m.add_class::<PyMomentSummary>()?;
    m.add_class::<PyDesign>()?;
    m.add_class::<PySimulationReport>()?;
    m.add_function(wrap_pyfunction!(score_table, m)?)?;
    m.add_function(wrap_pyfunction!(generic_score_table, m)?)?;
    m.add_function(wrap_pyfunction!(finetune, m)?)?;
    m.add_function(wrap_pyfunction!(moments, m)?)?;
    m.add_function(wrap_pyfunction!(code_length_nonadaptive, m)?)?;
    m.add_function(wrap_pyfunction!(code_length_adaptive, m)?)?;
    m.add_function(wrap_pyfunction!(eta, m)?)?;
    m.add_function(wrap_pyfunction!(asymptotic_code_length, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_p, m)?)?;
    m.add_function(wrap_pyfunction!(build_design, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(arcsine_p_sample, m)?)?;
    m.add_function(wrap_pyfunction!(matrix_dump_round_trip, m)?)?;
    Ok(())
}
