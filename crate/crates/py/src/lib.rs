//! Python bindings: federation synthesis, the simulation loop, evaluation and
//! the aggregation/metric primitives.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde_json::Value;

use grpfed::data::{self, DataSource, FederationManifest, FederationSpec};
use grpfed::experiment::{self, ExperimentConfig};
use grpfed::fl::{self, StrategyConfig, StrategyKind};
use grpfed::metrics::{self, ConfusionMatrix};
use grpfed::nn::Matrix;
use grpfed::Error;

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Numerical(msg) => PyRuntimeError::new_err(format!("numerical abort: {msg}")),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, value: &Value) -> PyResult<Bound<'py, PyAny>> {
    match value {
        Value::Null => py.None().into_bound_py_any(py),
        Value::Bool(b) => b.into_bound_py_any(py),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_bound_py_any(py),
            (_, Some(u)) => u.into_bound_py_any(py),
            _ => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py),
        },
        Value::String(s) => s.into_bound_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_bound_py_any(py)
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, v) in map {
                dict.set_item(k, json_to_py(py, v)?)?;
            }
            dict.into_bound_py_any(py)
        }
    }
}

fn serialize_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn rows_to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(to_py_err)
}

/// A generated or ingested federation.
#[pyclass(name = "Federation", module = "grpfed_py", frozen)]
struct PyFederation {
    source: DataSource,
    inner: data::Federation,
}

#[pymethods]
impl PyFederation {
    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim
    }

    #[getter]
    fn num_clients(&self) -> usize {
        self.inner.num_clients()
    }

    fn client_sizes(&self) -> Vec<usize> {
        self.inner.clients.iter().map(|c| c.size()).collect()
    }

    /// Test-split features and labels of one client, or of the pooled test set.
    #[pyo3(signature = (client=None))]
    fn test_set(&self, client: Option<usize>) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
        let samples = match client {
            None => &self.inner.global_test,
            Some(m) => {
                &self
                    .inner
                    .clients
                    .get(m)
                    .ok_or_else(|| PyValueError::new_err(format!("no client {m}")))?
                    .test
            }
        };
        let rows = (0..samples.len()).map(|i| samples.features.row(i).to_vec()).collect();
        Ok((rows, samples.labels.clone()))
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize_to_py(py, &data::stats(&self.inner))
    }

    fn manifest<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize_to_py(py, &FederationManifest::new(&self.source, &self.inner))
    }
}

/// Synthesize a long-tailed federation.
#[pyfunction]
#[pyo3(signature = (clients=10, classes=8, features=16, base_n=600, rho=0.7, tau=0.5, test_fraction=0.2, spread=2.0, center_scale=1.0, seed=0))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    clients: usize,
    classes: usize,
    features: usize,
    base_n: usize,
    rho: f64,
    tau: f64,
    test_fraction: f64,
    spread: f64,
    center_scale: f64,
    seed: u64,
) -> PyResult<PyFederation> {
    let spec = FederationSpec {
        clients,
        classes,
        features,
        base_n,
        rho,
        tau,
        test_fraction,
        spread,
        center_scale,
        seed,
    };
    let inner = data::synthesize(&spec).map_err(to_py_err)?;
    Ok(PyFederation {
        source: DataSource::Synthetic(spec),
        inner,
    })
}

/// Round-by-round training of one strategy on a federation.
#[pyclass(name = "Simulation", module = "grpfed_py")]
struct PySimulation {
    federation: Py<PyFederation>,
    inner: fl::Simulation,
    curves: metrics::CurveTable,
}

#[pymethods]
impl PySimulation {
    /// `config` is an optional JSON object of strategy fields (see
    /// `StrategyConfig`); `strategy` and `seed` take precedence over it.
    #[new]
    #[pyo3(signature = (federation, strategy="grp-fed", seed=0, config=None))]
    fn new(federation: Py<PyFederation>, strategy: &str, seed: u64, config: Option<&str>) -> PyResult<Self> {
        let kind: StrategyKind = strategy.parse().map_err(to_py_err)?;
        let mut cfg = match config {
            Some(text) => {
                let mut value: Value = serde_json::from_str(text)
                    .map_err(|e| PyValueError::new_err(format!("invalid config: {e}")))?;
                if let Some(obj) = value.as_object_mut() {
                    obj.insert("kind".into(), serde_json::to_value(kind).expect("kind"));
                }
                serde_json::from_value::<StrategyConfig>(value)
                    .map_err(|e| PyValueError::new_err(format!("invalid config: {e}")))?
            }
            None => StrategyConfig::new(kind),
        };
        cfg.seed = seed;
        let inner = fl::Simulation::for_federation(cfg, &federation.get().inner).map_err(to_py_err)?;
        Ok(PySimulation {
            federation,
            inner,
            curves: metrics::CurveTable::new(),
        })
    }

    #[getter]
    fn round(&self) -> usize {
        self.inner.round()
    }

    #[getter]
    fn q(&self) -> f64 {
        self.inner.server.q
    }

    #[getter]
    fn strategy(&self) -> &'static str {
        self.inner.kind().name()
    }

    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        serialize_to_py(py, &self.inner.config)
    }

    /// Runs one round and returns its report.
    fn run_round<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = self.inner.run_round(&self.federation.get().inner).map_err(to_py_err)?;
        self.curves.push(&report).map_err(to_py_err)?;
        serialize_to_py(py, &report)
    }

    /// Runs `rounds` more rounds (default: until the configured total).
    #[pyo3(signature = (rounds=None))]
    fn run<'py>(&mut self, py: Python<'py>, rounds: Option<usize>) -> PyResult<Bound<'py, PyList>> {
        let target = rounds.map_or(self.inner.config.rounds, |r| self.inner.round() + r);
        let out = PyList::empty(py);
        while self.inner.round() < target {
            out.append(self.run_round(py)?)?;
        }
        Ok(out)
    }

    /// Global, personalization, generalization and local-test scores.
    fn evaluate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let report = metrics::evaluate(&self.inner, &self.federation.get().inner, self.curves.clone())
            .map_err(to_py_err)?;
        serialize_to_py(py, &report)
    }

    /// Predicted classes; `owner` routes through that client's local model.
    #[pyo3(signature = (rows, owner=None))]
    fn infer(&self, rows: Vec<Vec<f64>>, owner: Option<usize>) -> PyResult<Vec<usize>> {
        let x = rows_to_matrix(rows)?;
        self.inner.infer(&x, owner).map_err(to_py_err)
    }

    fn save_checkpoint(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save_checkpoint(&path).map_err(to_py_err)
    }

    #[staticmethod]
    fn load_checkpoint(path: PathBuf, federation: Py<PyFederation>) -> PyResult<Self> {
        let inner = fl::Simulation::load_checkpoint(&path).map_err(to_py_err)?;
        Ok(PySimulation {
            federation,
            inner,
            curves: metrics::CurveTable::new(),
        })
    }
}

/// Macro-F1 of a square confusion matrix (rows = true class).
#[pyfunction]
fn macro_f1(counts: Vec<Vec<u64>>) -> PyResult<f64> {
    let cm = ConfusionMatrix::from_counts(&counts).map_err(to_py_err)?;
    Ok(metrics::macro_f1(&cm))
}

#[pyfunction]
fn harmonic_mean(a: f64, b: f64) -> f64 {
    metrics::harmonic_mean(a, b)
}

/// One step of the adaptive loss-power schedule.
#[pyfunction]
fn adapt_q(q: f64, prev_std: f64, new_std: f64, eta_q: f64) -> f64 {
    fl::adapt_q(q, prev_std, new_std, eta_q)
}

/// Normalized loss-powered aggregation weights.
#[pyfunction]
fn aggregation_weights(losses: Vec<f64>, q: f64) -> PyResult<Vec<f64>> {
    fl::aggregation_weights(&losses, q).map_err(to_py_err)
}

/// Runs an experiment from a JSON config; returns the run summary.
#[pyfunction]
#[pyo3(signature = (config_json, out=None))]
fn run_experiment<'py>(py: Python<'py>, config_json: &str, out: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py_err)?;
    let outcome = py
        .detach(|| experiment::run_experiment(&cfg, out.as_deref()))
        .map_err(to_py_err)?;
    serialize_to_py(py, &outcome.summary().map_err(to_py_err)?)
}

#[pymodule]
fn grpfed_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFederation>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_mean, m)?)?;
    m.add_function(wrap_pyfunction!(adapt_q, m)?)?;
    m.add_function(wrap_pyfunction!(aggregation_weights, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
