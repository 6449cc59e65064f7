//! Python bindings: configs, scenarios, the plant model, closed-loop runs,
//! batch runs and window searches.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rampc::config::ControllerConfig;
use rampc::dynamics::{HookModel, InputVector, StateVector, NU, NX};
use rampc::feasibility::{grasp_window_search, placement_window_search, WindowSearchConfig, WindowSearchResult};
use rampc::sim::output::{write_steps_csv, RunSummary};
use rampc::sim::{self as core_sim, study, Controller};

fn py_err(e: rampc::Error) -> PyErr {
    match e {
        rampc::Error::Io(e) => PyIOError::new_err(e.to_string()),
        e @ (rampc::Error::Config(_) | rampc::Error::InvalidArgument(_) | rampc::Error::Dimension(_)) => {
            PyValueError::new_err(e.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn controller(name: &str) -> PyResult<Controller> {
    match name {
        "nominal" => Ok(Controller::Nominal),
        "ramp" => Ok(Controller::RobustAdaptive),
        other => Err(PyValueError::new_err(format!("unknown controller {other:?}, expected 'nominal' or 'ramp'"))),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Controller configuration.
#[pyclass(name = "Config")]
#[derive(Clone, Default)]
struct PyConfig {
    inner: ControllerConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ControllerConfig::load(&path).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        ControllerConfig::from_toml_str(text).map(|inner| Self { inner }).map_err(py_err)
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string_pretty(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.sim.horizon
    }

    #[getter]
    fn dt(&self) -> f64 {
        self.inner.sim.dt
    }

    #[getter]
    fn disturbance_level(&self) -> f64 {
        self.inner.sim.disturbance_level
    }

    #[setter]
    fn set_disturbance_level(&mut self, level: f64) -> PyResult<()> {
        let mut cfg = self.inner.clone();
        cfg.sim.disturbance_level = level;
        cfg.validate().map_err(py_err)?;
        self.inner = cfg;
        Ok(())
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// One pick-and-place scenario.
#[pyclass(name = "Scenario")]
#[derive(Clone)]
struct PyScenario {
    inner: core_sim::Scenario,
}

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        core_sim::Scenario::load(&path).map(|inner| Self { inner }).map_err(py_err)
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        core_sim::Scenario::from_toml_str(text).map(|inner| Self { inner }).map_err(py_err)
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string_pretty(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
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
    fn payload_mass(&self) -> f64 {
        self.inner.payload_mass
    }

    #[getter]
    fn mass_deviation(&self) -> f64 {
        self.inner.mass_deviation
    }

    #[setter]
    fn set_mass_deviation(&mut self, d: f64) -> PyResult<()> {
        let mut s = self.inner.clone();
        s.mass_deviation = d;
        s.validate().map_err(py_err)?;
        self.inner = s;
        Ok(())
    }

    #[getter]
    fn true_mass(&self) -> f64 {
        self.inner.true_mass()
    }

    /// `(grasp_open, grasp_close, place_open, place_close)` in seconds.
    #[getter]
    fn windows(&self) -> (f64, f64, f64, f64) {
        let w = self.inner.windows;
        (w.grasp_open, w.grasp_close, w.place_open, w.place_close)
    }
}

/// Outcome of a closed-loop run.
#[pyclass(name = "SimResult")]
struct PySimResult {
    inner: core_sim::SimResult,
}

#[pymethods]
impl PySimResult {
    #[getter]
    fn status(&self) -> &'static str {
        self.inner.status.as_str()
    }

    #[getter]
    fn success(&self) -> bool {
        self.inner.success()
    }

    #[getter]
    fn t_grasp(&self) -> Option<f64> {
        self.inner.t_grasp
    }

    #[getter]
    fn t_place(&self) -> Option<f64> {
        self.inner.t_place
    }

    #[getter]
    fn cost(&self) -> f64 {
        self.inner.cost
    }

    #[getter]
    fn max_violation(&self) -> f64 {
        self.inner.max_violation
    }

    fn __len__(&self) -> usize {
        self.inner.steps.len()
    }

    fn times(&self) -> Vec<f64> {
        self.inner.steps.iter().map(|s| s.t).collect()
    }

    fn states(&self) -> Vec<Vec<f64>> {
        self.inner.steps.iter().map(|s| s.state.as_slice().to_vec()).collect()
    }

    fn inputs(&self) -> Vec<Vec<f64>> {
        self.inner.steps.iter().map(|s| s.input.as_slice().to_vec()).collect()
    }

    fn phases(&self) -> Vec<u8> {
        self.inner.steps.iter().map(|s| s.phase.index()).collect()
    }

    fn mass_estimates(&self) -> Vec<f64> {
        self.inner.steps.iter().map(|s| s.mass_estimate).collect()
    }

    fn mass_variances(&self) -> Vec<f64> {
        self.inner.steps.iter().map(|s| s.mass_variance).collect()
    }

    /// JSON summary (status, event times, cost, violation, mass).
    fn summary_json(&self) -> PyResult<String> {
        to_json(&RunSummary::from(&self.inner))
    }

    fn steps_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_steps_csv(&self.inner, &mut buf).map_err(py_err)?;
        String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Quadrotor with a suspended hook.
#[pyclass(name = "Model")]
struct PyModel {
    inner: Arc<HookModel>,
}

fn vector<const N: usize>(v: &[f64], what: &str) -> PyResult<nalgebra::SVector<f64, N>> {
    if v.len() != N {
        return Err(PyValueError::new_err(format!("{what} has {N} entries, got {}", v.len())));
    }
    Ok(nalgebra::SVector::from_column_slice(v))
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&PyConfig>) -> PyResult<Self> {
        let params = config.map(|c| c.inner.model.clone()).unwrap_or_default();
        HookModel::new(params).map(|m| Self { inner: Arc::new(m) }).map_err(py_err)
    }

    fn derivative(&self, x: Vec<f64>, u: Vec<f64>, payload_mass: f64) -> PyResult<Vec<f64>> {
        let x: StateVector = vector::<NX>(&x, "state")?;
        let u: InputVector = vector::<NU>(&u, "input")?;
        let dx = self.inner.derivative(&x, &u, payload_mass).map_err(py_err)?;
        Ok(dx.as_slice().to_vec())
    }

    fn rk4(&self, x: Vec<f64>, u: Vec<f64>, payload_mass: f64, dt: f64) -> PyResult<Vec<f64>> {
        let x: StateVector = vector::<NX>(&x, "state")?;
        let u: InputVector = vector::<NU>(&u, "input")?;
        let next = self.inner.rk4(&x, &u, payload_mass, dt).map_err(py_err)?;
        Ok(next.as_slice().to_vec())
    }

    fn hover_input(&self, payload_mass: f64) -> Vec<f64> {
        self.inner.hover_input(payload_mass).as_slice().to_vec()
    }
}

fn config_or_default(config: Option<&PyConfig>) -> ControllerConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Simulates one scenario with the `"nominal"` or `"ramp"` controller.
#[pyfunction]
#[pyo3(signature = (scenario, controller="ramp", config=None))]
fn run(py: Python<'_>, scenario: &PyScenario, controller: &str, config: Option<&PyConfig>) -> PyResult<PySimResult> {
    let c = self::controller(controller)?;
    let cfg = config_or_default(config);
    let scn = scenario.inner.clone();
    let inner = py.allow_threads(|| core_sim::run_closed_loop(&scn, c, &cfg)).map_err(py_err)?;
    Ok(PySimResult { inner })
}

/// Runs the scenarios on `jobs` threads; results keep the input order.
#[pyfunction]
#[pyo3(signature = (scenarios, controller="ramp", config=None, jobs=1))]
fn batch(
    py: Python<'_>,
    scenarios: Vec<PyRef<'_, PyScenario>>,
    controller: &str,
    config: Option<&PyConfig>,
    jobs: usize,
) -> PyResult<Vec<PySimResult>> {
    let c = self::controller(controller)?;
    let cfg = config_or_default(config);
    let set: Vec<core_sim::Scenario> = scenarios.iter().map(|s| s.inner.clone()).collect();
    let results = py.allow_threads(|| core_sim::batch_run(&set, c, &cfg, jobs)).map_err(py_err)?;
    results
        .into_iter()
        .map(|r| r.map(|inner| PySimResult { inner }).map_err(py_err))
        .collect()
}

/// `n` seeded scenarios from the default parameter box.
#[pyfunction]
fn study_scenarios(n: usize, seed: u64) -> Vec<PyScenario> {
    study::study_scenarios(n, seed)
        .into_iter()
        .map(|inner| PyScenario { inner })
        .collect()
}

/// Grasp and placement window searches; returns the certificate as JSON.
#[pyfunction]
#[pyo3(signature = (config=None, search_toml=None))]
fn window_search(py: Python<'_>, config: Option<&PyConfig>, search_toml: Option<&str>) -> PyResult<String> {
    let cfg = config_or_default(config);
    let search: WindowSearchConfig = match search_toml {
        Some(text) => toml::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => WindowSearchConfig::default(),
    };
    let cert = py
        .allow_threads(|| -> rampc::Result<WindowSearchResult> {
            let g = grasp_window_search(&cfg, &search)?;
            let p = placement_window_search(&cfg, &search)?;
            Ok(WindowSearchResult::merge(g, p))
        })
        .map_err(py_err)?;
    to_json(&cert)
}

/// Quantile of the chi-squared distribution.
#[pyfunction]
fn chi2_inv(dof: usize, alpha: f64) -> PyResult<f64> {
    rampc::estimator::chi2_inv(dof, alpha).map_err(py_err)
}

#[pymodule]
fn rampc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NX", NX)?;
    m.add("NU", NU)?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PySimResult>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(batch, m)?)?;
    m.add_function(wrap_pyfunction!(study_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(window_search, m)?)?;
    m.add_function(wrap_pyfunction!(chi2_inv, m)?)?;
    Ok(())
}
