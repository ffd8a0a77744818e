//! Python bindings: systems, data generation, networks, training, symbolic
//! fitting and the experiment runner.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hpinn_core::dynamics::{
    cell_apoptosis, lotka_volterra, viscous_burgers, ApoptosisParams, ApoptosisTarget, DifferentialSystem, FieldJet,
    HiddenMode, LvParams,
};
use hpinn_core::experiments::{run_experiment, ExperimentConfig, RunOptions};
use hpinn_core::sampling::{
    add_noise, burgers_reference, collocation, latin_hypercube, ode_reference, rk4_integrate, sample_measurements,
    BurgersSettings, ReferenceSolution, TimeSchedule,
};
use hpinn_core::symreg::{sparse_fit, BasisLibrary, FitOptions};
use hpinn_core::trainer::{train, TrainConfig};
use hpinn_core::{load_checkpoint, save_checkpoint, Error, MlpCheckpoint};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Checkpoint { .. } => PyIOError::new_err(e.to_string()),
        Error::NonFinite { .. } | Error::Integration { .. } | Error::Conditioning(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Feed-forward tanh network.
#[pyclass(name = "Mlp", module = "hpinn", skip_from_py_object)]
#[derive(Clone)]
pub struct PyMlp {
    inner: hpinn_core::Mlp,
}

#[pymethods]
impl PyMlp {
    #[new]
    #[pyo3(signature = (widths, seed = 0))]
    fn new(widths: Vec<usize>, seed: u64) -> PyResult<Self> {
        Ok(PyMlp {
            inner: hpinn_core::Mlp::init_glorot(&widths, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = load_checkpoint(&path).and_then(|c| c.to_mlp()).map_err(to_py)?;
        Ok(PyMlp { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&MlpCheckpoint::new(&self.inner, None, 0), &path).map_err(to_py)
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&x).map_err(to_py)
    }

    #[getter]
    fn widths(&self) -> Vec<usize> {
        self.inner.widths().to_vec()
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.params().len()
    }

    fn __repr__(&self) -> String {
        format!("Mlp(widths={:?})", self.inner.widths())
    }
}

/// A differential system with known and hidden parts.
#[pyclass(name = "System", module = "hpinn", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PySystem {
    inner: DifferentialSystem,
}

#[pymethods]
impl PySystem {
    #[staticmethod]
    #[pyo3(signature = (alpha = 1.3, beta = 0.9, gamma = 0.8, delta = 1.8, shared = false))]
    fn lotka_volterra(alpha: f64, beta: f64, gamma: f64, delta: f64, shared: bool) -> PyResult<Self> {
        let params = LvParams {
            alpha,
            beta,
            gamma,
            delta,
            ..LvParams::default()
        };
        let mode = if shared { HiddenMode::SharedScaled } else { HiddenMode::Decoupled };
        Ok(PySystem {
            inner: lotka_volterra(params, mode).map_err(to_py)?,
        })
    }

    /// `target` is `"v1"` or `"v2"`.
    #[staticmethod]
    #[pyo3(signature = (target = "v1"))]
    fn apoptosis(target: &str) -> PyResult<Self> {
        let target = match target {
            "v1" => ApoptosisTarget::V1,
            "v2" => ApoptosisTarget::V2,
            other => return Err(PyValueError::new_err(format!("unknown target {other:?}"))),
        };
        Ok(PySystem {
            inner: cell_apoptosis(ApoptosisParams::default(), target).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (nu = 1.0 / (1000.0 * std::f64::consts::PI)))]
    fn burgers(nu: f64) -> PyResult<Self> {
        Ok(PySystem {
            inner: viscous_burgers(nu).map_err(to_py)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn state_names(&self) -> Vec<String> {
        self.inner.state_names.clone()
    }

    #[getter]
    fn hidden_input_names(&self) -> Vec<String> {
        self.inner.hidden_input_names()
    }

    #[getter]
    fn is_ode(&self) -> bool {
        self.inner.is_ode()
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.inner.domain.horizon
    }

    /// Full right-hand side at a state (ODE systems).
    fn rhs(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_state(&u)?;
        Ok(self.inner.ode_rhs(&u))
    }

    /// True hidden terms at a state (ODE systems).
    fn hidden_true(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check_state(&u)?;
        let f: Vec<FieldJet<f64>> = u.iter().map(|&v| FieldJet::state(v)).collect();
        Ok(self.inner.hidden_true(&f))
    }

    /// RK4 solution sampled at `times`, as a list of states.
    #[pyo3(signature = (times, step = 1e-3))]
    fn solve(&self, times: Vec<f64>, step: f64) -> PyResult<Vec<Vec<f64>>> {
        Ok(rk4_integrate(&self.inner, &times, step).map_err(to_py)?.states)
    }

    fn __repr__(&self) -> String {
        format!("System({:?})", self.inner.name)
    }
}

impl PySystem {
    fn check_state(&self, u: &[f64]) -> PyResult<()> {
        if !self.inner.is_ode() || u.len() != self.inner.state_dim() {
            return Err(PyValueError::new_err(format!(
                "expected an ODE state of length {}",
                self.inner.state_dim()
            )));
        }
        Ok(())
    }

    fn reference(&self) -> PyResult<ReferenceSolution> {
        if self.inner.is_ode() {
            Ok(ReferenceSolution::Ode(ode_reference(&self.inner, 1e-3).map_err(to_py)?))
        } else {
            let nu = self.inner.viscosity().unwrap_or_default();
            Ok(ReferenceSolution::Pde(
                burgers_reference(nu, &BurgersSettings::default()).map_err(to_py)?,
            ))
        }
    }
}

/// Measurement records `(t, x, u)`.
#[pyclass(name = "Dataset", module = "hpinn", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyDataset {
    inner: hpinn_core::sampling::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Samples the reference solution at `count` equispaced times (or at
    /// `times`) and adds relative Gaussian noise.
    #[staticmethod]
    #[pyo3(signature = (system, count = None, times = None, noise = 0.0, seed = 0, spatial_points = 256))]
    fn generate(
        system: &PySystem,
        count: Option<usize>,
        times: Option<Vec<f64>>,
        noise: f64,
        seed: u64,
        spatial_points: usize,
    ) -> PyResult<Self> {
        let schedule = match (count, times) {
            (Some(n), None) => TimeSchedule::Count(n),
            (None, Some(t)) => TimeSchedule::Times(t),
            _ => return Err(PyValueError::new_err("give exactly one of count or times")),
        };
        let reference = system.reference()?;
        let clean = sample_measurements(&system.inner, &reference, &schedule, spatial_points).map_err(to_py)?;
        Ok(PyDataset {
            inner: add_noise(&clean, noise, seed),
        })
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        Ok(PyDataset {
            inner: hpinn_core::sampling::Dataset::read_csv(&path).map_err(to_py)?,
        })
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv(&path).map_err(to_py)
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.records.iter().map(|r| r.t).collect()
    }

    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        self.inner.states()
    }

    #[getter]
    fn noise(&self) -> f64 {
        self.inner.noise
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Trained hybrid model and its scores.
#[pyclass(name = "TrainResult", module = "hpinn", frozen)]
pub struct PyTrainResult {
    system: DifferentialSystem,
    model: hpinn_core::trainer::HybridModel,
    report: hpinn_core::trainer::TrainReport,
}

#[pymethods]
impl PyTrainResult {
    #[getter]
    fn hidden_mse(&self) -> f64 {
        self.report.hidden_mse
    }

    #[getter]
    fn surrogate_mse(&self) -> f64 {
        self.report.surrogate_mse
    }

    #[getter]
    fn iterations(&self) -> usize {
        self.report.iterations
    }

    #[getter]
    fn scale(&self) -> Option<f64> {
        self.model.scale
    }

    /// Total loss per iteration.
    #[getter]
    fn loss(&self) -> Vec<f64> {
        (0..self.report.loss_pinn.len())
            .map(|i| self.report.loss_measurement[i] + self.report.loss_boundary[i] + self.report.loss_pinn[i])
            .collect()
    }

    #[getter]
    fn surrogate(&self) -> PyMlp {
        PyMlp {
            inner: self.model.surrogate.clone(),
        }
    }

    #[getter]
    fn hidden(&self) -> PyMlp {
        PyMlp {
            inner: self.model.hidden.clone(),
        }
    }

    /// Learned hidden terms at a plain state (ODE systems).
    fn predict_hidden(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        if u.len() != self.system.state_dim() {
            return Err(PyValueError::new_err("state length mismatch"));
        }
        let f: Vec<FieldJet<f64>> = u.iter().map(|&v| FieldJet::state(v)).collect();
        self.model.hidden_terms(&self.system, &f).map_err(to_py)
    }

    /// The report as a JSON string.
    fn report_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.report).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Trains `U` and `F` jointly on the hybrid loss.
#[pyfunction]
#[pyo3(signature = (system, dataset, n_interior = 1000, n_boundary = 0, iterations = 5000,
    lbfgs_iterations = 0, learning_rate = 1e-3, surrogate_layers = vec![32, 32, 32],
    hidden_layers = vec![32, 32], seed = 0))]
#[allow(clippy::too_many_arguments)]
fn train_pinn(
    py: Python<'_>,
    system: &PySystem,
    dataset: &PyDataset,
    n_interior: usize,
    n_boundary: usize,
    iterations: usize,
    lbfgs_iterations: usize,
    learning_rate: f64,
    surrogate_layers: Vec<usize>,
    hidden_layers: Vec<usize>,
    seed: u64,
) -> PyResult<PyTrainResult> {
    let config = TrainConfig {
        iterations,
        lbfgs_iterations,
        learning_rate,
        surrogate_layers,
        hidden_layers,
        seed,
        ..TrainConfig::default()
    };
    let reference = system.reference()?;
    let sys = system.inner.clone();
    let data = dataset.inner.clone();
    let outcome = py
        .detach(move || {
            let colloc = collocation(&sys, n_interior, n_boundary, seed ^ 0xc011)?;
            train(&sys, &data, &colloc, &config, &reference).map(|o| (sys, o))
        })
        .map_err(to_py)?;
    Ok(PyTrainResult {
        system: outcome.0,
        model: outcome.1.model,
        report: outcome.1.report,
    })
}

/// Latin hypercube sample of `n` points in the box `bounds`.
#[pyfunction]
#[pyo3(signature = (n, bounds, seed = 0))]
fn lhs(n: usize, bounds: Vec<(f64, f64)>, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    latin_hypercube(n, &bounds, seed).map_err(to_py)
}

/// Sparse polynomial fit; returns `(expression, {term: coefficient}, mse)`.
#[pyfunction]
#[pyo3(signature = (inputs, targets, names, max_degree = 3, threshold = 0.05))]
fn symbolic_fit(
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    names: Vec<String>,
    max_degree: u32,
    threshold: f64,
) -> PyResult<(String, Vec<(String, f64)>, f64)> {
    let library = BasisLibrary::polynomial(names, max_degree);
    let model = sparse_fit(
        &inputs,
        &targets,
        &library,
        &FitOptions {
            threshold,
            ..FitOptions::default()
        },
    )
    .map_err(to_py)?;
    let terms = model.terms.iter().map(|t| (t.term.clone(), t.coefficient)).collect();
    Ok((model.expression(), terms, model.mse))
}

/// Runs an experiment config file; returns `(seed, method, hidden_mse)` rows.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None, dry_run = false))]
fn run(py: Python<'_>, config: PathBuf, out: PathBuf, seed: Option<u64>, dry_run: bool) -> PyResult<Vec<(u64, String, f64)>> {
    let cfg = ExperimentConfig::load(&config).map_err(to_py)?;
    let opts = RunOptions {
        dry_run,
        seed,
        method: None,
        quiet: true,
    };
    let outcome = py.detach(move || run_experiment(&cfg, &out, &opts)).map_err(to_py)?;
    let mut rows = Vec::new();
    for r in &outcome.runs {
        if let Some(p) = &r.pinn {
            rows.push((r.seed, "pinn".to_string(), p.report.hidden_mse));
        }
        if let Some(u) = &r.ude {
            rows.push((r.seed, "ude".to_string(), u.report.hidden_mse));
        }
    }
    Ok(rows)
}

#[pymodule]
fn hpinn(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMlp>()?;
    m.add_class::<PySystem>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(train_pinn, m)?)?;
    m.add_function(wrap_pyfunction!(lhs, m)?)?;
    m.add_function(wrap_pyfunction!(symbolic_fit, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
