//! Python bindings: scenario configs, single runs, sweeps and the control
//! thresholds.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use maiscc::channel::AntennaPlacement;
use maiscc::driver::{self, Scenario, Scheme};
use maiscc::harness::{self, ExperimentRecord, SweepKind};
use maiscc::scenario::ScenarioConfig;

fn py_err(e: maiscc::Error) -> PyErr {
    if e.is_config_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn points(p: &AntennaPlacement) -> Vec<(f64, f64)> {
    p.positions().iter().map(|&[x, y]| (x, y)).collect()
}

/// Scenario parameters. Built from defaults, a TOML file or a TOML string.
#[pyclass(name = "ScenarioConfig", module = "maiscc_py")]
struct PyConfig {
    inner: ScenarioConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self { inner: ScenarioConfig::default() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ScenarioConfig::from_toml_str(text).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn from_path(path: std::path::PathBuf) -> PyResult<Self> {
        ScenarioConfig::from_path(path).map(|inner| Self { inner }).map_err(py_err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    /// Short hash of the serialized config.
    fn config_hash(&self) -> String {
        self.inner.config_hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn max_power_dbm(&self) -> f64 {
        self.inner.max_power_dbm
    }

    #[setter]
    fn set_max_power_dbm(&mut self, dbm: f64) {
        self.inner.max_power_dbm = dbm;
    }

    #[getter]
    fn num_antennas(&self) -> usize {
        self.inner.num_antennas
    }

    #[getter]
    fn num_gus(&self) -> usize {
        self.inner.num_gus
    }

    #[getter]
    fn num_cavs(&self) -> usize {
        self.inner.num_cavs
    }

    #[getter]
    fn num_targets(&self) -> usize {
        self.inner.num_targets
    }

    /// Sets the LQR budget of every plant.
    fn set_lqr_budget(&mut self, budget: f64) {
        self.inner.set_lqr_budget(budget);
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "ScenarioConfig(seed={}, M={}, N={}, J={}, K={}, p_max={} dBm)",
            self.inner.seed,
            self.inner.num_antennas,
            self.inner.num_gus,
            self.inner.num_cavs,
            self.inner.num_targets,
            self.inner.max_power_dbm
        )
    }
}

/// Outcome of one scheme on one scenario.
#[pyclass(name = "Result", module = "maiscc_py", get_all)]
struct PyRunResult {
    scheme: String,
    status: String,
    sum_rate: f64,
    gu_rates: Vec<f64>,
    cav_rates: Vec<f64>,
    r_min: Vec<f64>,
    /// Antenna positions in meters.
    placement: Vec<(f64, f64)>,
    /// `(outer iteration, sum rate)` pairs.
    outer_trace: Vec<(usize, f64)>,
    min_sensing_slack: f64,
    note: String,
}

#[pymethods]
impl PyRunResult {
    fn __repr__(&self) -> String {
        format!("Result(scheme={}, status={}, sum_rate={:.4})", self.scheme, self.status, self.sum_rate)
    }
}

/// Runs `scheme` ("ao", "rap" or "fap") on `config`.
#[pyfunction]
fn optimize(py: Python<'_>, config: PyRef<'_, PyConfig>, scheme: &str) -> PyResult<PyRunResult> {
    let scheme: Scheme = scheme.parse().map_err(py_err)?;
    let cfg = config.inner.clone();
    let r = py
        .detach(move || Scenario::prepare(&cfg).and_then(|s| driver::run_scheme(&s, scheme)))
        .map_err(py_err)?;
    Ok(PyRunResult {
        scheme: r.scheme.to_string(),
        status: r.status.as_str().to_string(),
        sum_rate: r.sum_rate,
        gu_rates: r.gu_rates.clone(),
        cav_rates: r.cav_rates.clone(),
        r_min: r.r_min.clone(),
        placement: points(&r.placement),
        outer_trace: r.outer_trace.clone(),
        min_sensing_slack: r.report.min_sensing(),
        note: r.note,
    })
}

/// Minimum CAV rates implied by the control budgets, one per CAV.
#[pyfunction]
fn control_thresholds(config: PyRef<'_, PyConfig>) -> PyResult<Vec<f64>> {
    Scenario::prepare(&config.inner).map(|s| s.r_min).map_err(py_err)
}

/// Fixed-grid antenna placement, meters.
#[pyfunction]
fn fap_placement(config: PyRef<'_, PyConfig>) -> PyResult<Vec<(f64, f64)>> {
    driver::fap_placement(&config.inner).map(|p| points(&p)).map_err(py_err)
}

/// Seeded random antenna placement, meters.
#[pyfunction]
fn rap_placement(config: PyRef<'_, PyConfig>) -> PyResult<Vec<(f64, f64)>> {
    driver::rap_placement(&config.inner).map(|p| points(&p)).map_err(py_err)
}

fn record_dict<'py>(py: Python<'py>, r: &ExperimentRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("sweep", r.sweep.as_str())?;
    d.set_item("scheme", r.scheme.as_str())?;
    d.set_item("seed", r.seed)?;
    d.set_item("p_max_dbm", r.p_max_dbm)?;
    d.set_item("lqr_budget", r.lqr_budget)?;
    d.set_item("status", r.status.as_str())?;
    d.set_item("sum_rate", r.sum_rate)?;
    d.set_item("min_sensing_slack", r.min_sensing_slack)?;
    d.set_item("outer_iters", r.outer_iters)?;
    d.set_item("gu_rates", r.gu_rates.clone())?;
    d.set_item("cav_rates", r.cav_rates.clone())?;
    d.set_item("r_min", r.r_min.clone())?;
    Ok(d)
}

fn records<'py>(py: Python<'py>, rows: &[ExperimentRecord]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    rows.iter().map(|r| record_dict(py, r)).collect()
}

/// One record (as a dict) for `scheme` on `config`.
#[pyfunction]
fn run<'py>(py: Python<'py>, config: PyRef<'_, PyConfig>, scheme: &str) -> PyResult<Bound<'py, PyDict>> {
    let scheme: Scheme = scheme.parse().map_err(py_err)?;
    let cfg = config.inner.clone();
    let row = py.detach(move || harness::run(&cfg, scheme, SweepKind::Single)).map_err(py_err)?;
    record_dict(py, &row)
}

/// All schemes over `seeds` x `dbm`; one dict per run.
#[pyfunction]
#[pyo3(signature = (config, seeds, dbm, jobs = 0))]
fn sweep_power<'py>(py: Python<'py>, config: PyRef<'_, PyConfig>, seeds: Vec<u64>, dbm: Vec<f64>, jobs: usize) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.inner.clone();
    let rows = py.detach(move || harness::sweep_power(&cfg, &seeds, &dbm, jobs)).map_err(py_err)?;
    records(py, &rows)
}

/// All schemes over `seeds` x `budgets`; one dict per run.
#[pyfunction]
#[pyo3(signature = (config, seeds, budgets = None, jobs = 0))]
fn sweep_lqr<'py>(
    py: Python<'py>,
    config: PyRef<'_, PyConfig>,
    seeds: Vec<u64>,
    budgets: Option<Vec<f64>>,
    jobs: usize,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = config.inner.clone();
    let budgets = match budgets {
        Some(b) => b,
        None => harness::default_budgets(&cfg).map_err(py_err)?,
    };
    let rows = py.detach(move || harness::sweep_lqr(&cfg, &seeds, &budgets, jobs)).map_err(py_err)?;
    records(py, &rows)
}

#[pymodule]
fn maiscc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_power, m)?)?;
    m.add_function(wrap_pyfunction!(sweep_lqr, m)?)?;
    m.add_function(wrap_pyfunction!(control_thresholds, m)?)?;
    m.add_function(wrap_pyfunction!(fap_placement, m)?)?;
    m.add_function(wrap_pyfunction!(rap_placement, m)?)?;
    Ok(())
}
