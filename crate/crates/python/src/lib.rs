//! Python bindings for `exitbandit`.
//!
//! Thresholds are passed as plain lists of floats; reports and oracle
//! tables come back as read-only objects with list-valued attributes.

use exitbandit::{
    bandit, exit, metrics, report, synth, trace, ArmSet, ConfidenceTrace, CostModel, Error,
    OracleTable, RunReport, TraceStream,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(
    name = "ConfidenceTrace",
    module = "exitbandit_py",
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct PyTrace {
    inner: ConfidenceTrace,
}

#[pymethods]
impl PyTrace {
    #[new]
    #[pyo3(signature = (id, num_classes, confidences, predictions=None, label=None))]
    fn new(
        id: String,
        num_classes: usize,
        confidences: Vec<f64>,
        predictions: Option<Vec<usize>>,
        label: Option<usize>,
    ) -> PyResult<Self> {
        let mut t = ConfidenceTrace::new(id, num_classes, confidences).map_err(to_py)?;
        if let Some(p) = predictions {
            t = t.with_predictions(p).map_err(to_py)?;
        }
        if let Some(l) = label {
            t = t.with_label(l).map_err(to_py)?;
        }
        Ok(PyTrace { inner: t })
    }

    #[getter]
    fn id(&self) -> &str {
        &self.inner.id
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.inner.num_layers()
    }

    #[getter]
    fn confidences(&self) -> Vec<f64> {
        self.inner.confidences.clone()
    }

    #[getter]
    fn predictions(&self) -> Option<Vec<usize>> {
        self.inner.predictions.clone()
    }

    #[getter]
    fn label(&self) -> Option<usize> {
        self.inner.label
    }

    fn __repr__(&self) -> String {
        format!(
            "ConfidenceTrace(id={:?}, num_classes={}, layers={})",
            self.inner.id,
            self.inner.num_classes,
            self.inner.num_layers()
        )
    }
}

#[pyclass(name = "TraceStream", module = "exitbandit_py", frozen)]
struct PyStream {
    inner: TraceStream,
}

#[pymethods]
impl PyStream {
    #[new]
    fn new(traces: Vec<PyRef<'_, PyTrace>>) -> PyResult<Self> {
        let traces = traces.iter().map(|t| t.inner.clone()).collect();
        let prov =
            trace::Provenance::new(trace::ProvenanceKind::ReplayedFile).with("source", "python");
        Ok(PyStream {
            inner: TraceStream::new(traces, prov).map_err(to_py)?,
        })
    }

    /// Parse JSONL text.
    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        Ok(PyStream {
            inner: trace::parse_traces(text.as_bytes()).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn read(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyStream {
            inner: trace::read_trace_file(&path).map_err(to_py)?,
        })
    }

    /// Serialize to JSONL text.
    fn to_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        trace::write_traces(&self.inner, &mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn shuffled(&self, seed: u64) -> Self {
        PyStream {
            inner: trace::shuffle_stream(&self.inner, seed),
        }
    }

    fn traces(&self) -> Vec<PyTrace> {
        self.inner
            .traces()
            .iter()
            .map(|t| PyTrace { inner: t.clone() })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.inner.num_layers()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn is_labeled(&self) -> bool {
        self.inner.is_labeled()
    }

    #[getter]
    fn provenance(&self) -> Vec<(String, String)> {
        self.inner
            .provenance()
            .metadata
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

#[pyclass(name = "CostModel", module = "exitbandit_py", frozen)]
struct PyCost {
    inner: CostModel,
}

#[pymethods]
impl PyCost {
    /// `lambda_per_layer` defaults to 1/num_layers.
    #[new]
    #[pyo3(signature = (num_layers, lambda_per_layer=None, mu=exit::DEFAULT_MU))]
    fn new(num_layers: usize, lambda_per_layer: Option<f64>, mu: f64) -> PyResult<Self> {
        let lambda = lambda_per_layer.unwrap_or(1.0 / num_layers.max(1) as f64);
        Ok(PyCost {
            inner: CostModel::new(num_layers, lambda, mu).map_err(to_py)?,
        })
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.inner.num_layers()
    }

    #[getter]
    fn lambda_per_layer(&self) -> f64 {
        self.inner.lambda_per_layer()
    }

    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu()
    }

    fn latency_cost(&self, layer: usize) -> PyResult<f64> {
        self.inner.latency_cost(layer).map_err(to_py)
    }

    fn reward_bounds(&self, num_classes: usize) -> (f64, f64) {
        self.inner.reward_bounds(num_classes)
    }
}

#[pyclass(name = "OracleTable", module = "exitbandit_py", frozen)]
struct PyOracle {
    inner: OracleTable,
}

#[pymethods]
impl PyOracle {
    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.inner.thresholds.clone()
    }

    #[getter]
    fn per_arm_mean_reward(&self) -> Vec<f64> {
        self.inner.per_arm_mean_reward.clone()
    }

    #[getter]
    fn per_arm_exit_probability(&self) -> Vec<Vec<f64>> {
        self.inner.per_arm_exit_probability.clone()
    }

    #[getter]
    fn per_arm_accuracy(&self) -> Option<Vec<f64>> {
        self.inner.per_arm_accuracy.clone()
    }

    #[getter]
    fn best_arm_index(&self) -> usize {
        self.inner.best_arm_index
    }

    #[getter]
    fn best_threshold(&self) -> f64 {
        self.inner.best_threshold()
    }

    #[getter]
    fn gaps(&self) -> Vec<f64> {
        self.inner.gaps.clone()
    }

    fn speedup(&self, arm: usize) -> f64 {
        self.inner.speedup(arm)
    }

    fn expected_exit_layer(&self, arm: usize) -> f64 {
        self.inner.expected_exit_layer(arm)
    }
}

#[pyclass(name = "RunReport", module = "exitbandit_py", frozen)]
struct PyReport {
    inner: RunReport,
}

#[pymethods]
impl PyReport {
    #[getter]
    fn rounds(&self) -> usize {
        self.inner.rounds()
    }

    #[getter]
    fn arms_played(&self) -> Vec<usize> {
        self.inner.history.iter().map(|r| r.arm_index).collect()
    }

    #[getter]
    fn rewards(&self) -> Vec<f64> {
        self.inner
            .history
            .iter()
            .map(|r| r.outcome.reward)
            .collect()
    }

    #[getter]
    fn exit_layers(&self) -> Vec<usize> {
        self.inner
            .history
            .iter()
            .map(|r| r.outcome.exit_layer)
            .collect()
    }

    #[getter]
    fn cumulative_regret(&self) -> Vec<f64> {
        self.inner.cumulative_regret.clone()
    }

    #[getter]
    fn realized_regret(&self) -> Vec<f64> {
        self.inner.realized_regret.clone()
    }

    #[getter]
    fn speedup(&self) -> f64 {
        self.inner.speedup
    }

    #[getter]
    fn accuracy(&self) -> Option<f64> {
        self.inner.accuracy
    }

    #[getter]
    fn per_arm_pulls(&self) -> Vec<u64> {
        self.inner.per_arm_pulls.clone()
    }

    #[getter]
    fn q_values(&self) -> Vec<f64> {
        self.inner.q_values.clone()
    }

    #[getter]
    fn oracle(&self) -> PyOracle {
        PyOracle {
            inner: self.inner.oracle.clone(),
        }
    }

    fn pull_fraction(&self, arm: usize, window: usize) -> f64 {
        self.inner.pull_fraction(arm, window)
    }

    /// The per-round CSV written by `exitbandit run`.
    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        report::write_run_csv(&self.inner, &mut buf).map_err(to_py)?;
        String::from_utf8(buf).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

fn arm_set(thresholds: Vec<f64>, stream: &PyStream) -> PyResult<ArmSet> {
    ArmSet::new(thresholds, stream.inner.num_classes()).map_err(to_py)
}

#[pyfunction]
fn build_action_set(num_classes: usize, k: usize) -> PyResult<Vec<f64>> {
    Ok(bandit::build_action_set(num_classes, k)
        .map_err(to_py)?
        .thresholds()
        .to_vec())
}

#[pyfunction]
fn ucb_index(normalized_mean: f64, pulls: u64, t: u64, gamma: f64) -> f64 {
    bandit::ucb_index(normalized_mean, pulls, t, gamma)
}

/// Returns a dict with the exit layer, confidences at exit and layer 1,
/// reward, latency cost and whether the exit was early.
#[pyfunction]
fn evaluate_exit<'py>(
    py: Python<'py>,
    trace: &PyTrace,
    threshold: f64,
    cost: &PyCost,
) -> PyResult<Bound<'py, PyDict>> {
    let o = exit::evaluate_exit(&trace.inner, threshold, &cost.inner).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("exit_layer", o.exit_layer)?;
    d.set_item("exit_confidence", o.exit_confidence)?;
    d.set_item("first_confidence", o.first_confidence)?;
    d.set_item("reward", o.reward)?;
    d.set_item("latency_cost", o.latency_cost)?;
    d.set_item("exited_early", o.exited_early)?;
    d.set_item("prediction", o.prediction)?;
    Ok(d)
}

/// `seed=None` replays the stream in its stored order.
#[pyfunction]
#[pyo3(signature = (stream, thresholds, cost, gamma=bandit::DEFAULT_GAMMA, seed=None))]
fn run_stream(
    py: Python<'_>,
    stream: &PyStream,
    thresholds: Vec<f64>,
    cost: &PyCost,
    gamma: f64,
    seed: Option<u64>,
) -> PyResult<PyReport> {
    let arms = arm_set(thresholds, stream)?;
    let inner = py
        .detach(|| bandit::run_stream(&stream.inner, &arms, &cost.inner, gamma, seed))
        .map_err(to_py)?;
    Ok(PyReport { inner })
}

#[pyfunction]
fn oracle_mean_rewards(
    stream: &PyStream,
    thresholds: Vec<f64>,
    cost: &PyCost,
) -> PyResult<PyOracle> {
    let arms = arm_set(thresholds, stream)?;
    Ok(PyOracle {
        inner: metrics::oracle_mean_rewards(&stream.inner, &arms, &cost.inner).map_err(to_py)?,
    })
}

#[pyfunction]
fn regret_bound(gamma: f64, gaps: Vec<f64>, n: u64) -> f64 {
    metrics::regret_bound(gamma, &gaps, n)
}

#[pyfunction]
fn speedup_ratio(exit_counts: Vec<u64>) -> PyResult<f64> {
    metrics::speedup_ratio(&exit_counts).map_err(to_py)
}

/// `config_json` uses the same keys as the CLI generator config files.
#[pyfunction]
fn generate_stream(config_json: &str, count: usize) -> PyResult<PyStream> {
    let cfg = synth::SynthConfig::from_json(config_json).map_err(to_py)?;
    Ok(PyStream {
        inner: synth::generate_stream(&cfg, count).map_err(to_py)?,
    })
}

#[pymodule]
pub fn exitbandit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTrace>()?;
    m.add_class::<PyStream>()?;
    m.add_class::<PyCost>()?;
    m.add_class::<PyOracle>()?;
    m.add_class::<PyReport>()?;
    m.add_function(wrap_pyfunction!(build_action_set, m)?)?;
    m.add_function(wrap_pyfunction!(ucb_index, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_exit, m)?)?;
    m.add_function(wrap_pyfunction!(run_stream, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_mean_rewards, m)?)?;
    m.add_function(wrap_pyfunction!(regret_bound, m)?)?;
    m.add_function(wrap_pyfunction!(speedup_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(generate_stream, m)?)?;
    Ok(())
}
