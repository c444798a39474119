//! Python bindings for the trnews pipeline.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use trnews::config::RunConfig;
use trnews::evaluation::{rank_metrics, MetricsReport};
use trnews::inference::{run_query, ColdStartQuery};
use trnews::model::Model;
use trnews::pipeline;

fn to_py(e: trnews::Error) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

/// Run configuration in `key = value` form.
#[pyclass(name = "RunConfig", module = "trnews_py", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (text = ""))]
    fn new(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::parse(text).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(&path).map_err(to_py)?,
        })
    }

    /// Returns a copy with `key` set to `value`, validated like a file entry.
    fn with_value(&self, key: &str, value: &str) -> PyResult<Self> {
        let text = format!("{}\n{key} = {value}\n", self.inner.to_text());
        Ok(Self {
            inner: RunConfig::parse(&text).map_err(to_py)?,
        })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    #[getter]
    fn seed(&self) -> Option<u64> {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!("RunConfig(seed={:?})", self.inner.seed)
    }
}

fn resolved(cfg: &PyRunConfig, seed: Option<u64>) -> RunConfig {
    let mut c = cfg.inner.clone();
    c.resolve_seed(seed);
    c
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in ["hr5", "hr10", "ndcg5", "ndcg10", "mrr", "auc"].iter().zip(r.values()) {
        d.set_item(*k, v)?;
    }
    d.set_item("cases", r.cases)?;
    Ok(d)
}

/// Writes a synthetic corpus to `out`; returns the number of events.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None))]
fn synth(config: &PyRunConfig, out: PathBuf, seed: Option<u64>) -> PyResult<usize> {
    let s = pipeline::run_synth(&resolved(config, seed), &out).map_err(to_py)?;
    Ok(s.events.len())
}

/// Builds vocabulary and user split; returns (articles, users).
#[pyfunction]
#[pyo3(signature = (config, out, seed = None))]
fn prepare(config: &PyRunConfig, out: PathBuf, seed: Option<u64>) -> PyResult<(usize, usize)> {
    let p = pipeline::run_prepare(&resolved(config, seed), &out).map_err(to_py)?;
    Ok((p.corpus.articles().len(), p.corpus.users().len()))
}

#[pyfunction]
#[pyo3(signature = (config, out, seed = None))]
fn train<'py>(py: Python<'py>, config: &PyRunConfig, out: PathBuf, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = resolved(config, seed);
    let fit = py.detach(|| pipeline::run_train(&cfg, &out)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("best_iteration", fit.best_iteration)?;
    d.set_item("stopped_at", fit.stopped_at)?;
    d.set_item("best_hash", fit.best_hash)?;
    d.set_item("pair_generations", fit.pair_generations)?;
    Ok(d)
}

/// Cold-start metrics of the saved model and of the zero-vector baseline.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None))]
fn evaluate<'py>(py: Python<'py>, config: &PyRunConfig, out: PathBuf, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = resolved(config, seed);
    let e = py.detach(|| pipeline::run_evaluate(&cfg, &out)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("model", report_dict(py, &e.model)?)?;
    d.set_item("baseline", report_dict(py, &e.baseline)?)?;
    Ok(d)
}

/// Returns the attention table as TSV text.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None))]
fn case_study(config: &PyRunConfig, out: PathBuf, seed: Option<u64>) -> PyResult<String> {
    pipeline::run_case_study(&resolved(config, seed), &out).map_err(to_py)
}

/// One dict per checked loss.
#[pyfunction]
#[pyo3(signature = (dim = 8, history_len = 3, seed = 1))]
fn grad_check<'py>(py: Python<'py>, dim: usize, history_len: usize, seed: u64) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let entries = pipeline::grad_check(dim, history_len, seed).map_err(to_py)?;
    entries
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("loss", &e.loss)?;
            d.set_item("value", e.value)?;
            d.set_item("max_rel_error", e.report.max_relative_error)?;
            d.set_item("passed", e.passed())?;
            d.set_item("roundoff", e.worst_is_roundoff())?;
            Ok(d)
        })
        .collect()
}

/// Ranks candidate news ids for a user from their source-domain reads.
#[pyfunction]
#[pyo3(signature = (config, out, user, candidates, cutoff = None))]
fn recommend(
    config: &PyRunConfig,
    out: PathBuf,
    user: String,
    candidates: Vec<String>,
    cutoff: Option<i64>,
) -> PyResult<Vec<(String, f64)>> {
    let cfg = resolved(config, None);
    let model = Model::load(cfg.model.clone(), &out.join(pipeline::CHECKPOINT_FILE)).map_err(to_py)?;
    let prepared = pipeline::load_prepared(&cfg, &pipeline::corpus_dir(&cfg, &out)).map_err(to_py)?;
    let query = ColdStartQuery { user, candidates, cutoff };
    let ranked = run_query(&model, &prepared.corpus, &prepared.split, &query).map_err(to_py)?;
    Ok(ranked
        .into_iter()
        .map(|c| (prepared.corpus.article(c.article).id.clone(), c.score))
        .collect())
}

/// Ranking metrics of one case; the positive's score comes first.
#[pyfunction]
fn case_metrics<'py>(py: Python<'py>, scores: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let ids: Vec<usize> = (0..scores.len()).collect();
    let m = rank_metrics(&ids, &scores).map_err(to_py)?;
    let d = report_dict(py, &MetricsReport::from_cases(&[m]).map_err(to_py)?)?;
    d.set_item("rank", m.rank)?;
    Ok(d)
}

#[pymodule]
pub fn trnews_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRunConfig>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(prepare, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(case_study, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_function(wrap_pyfunction!(recommend, m)?)?;
    m.add_function(wrap_pyfunction!(case_metrics, m)?)?;
    Ok(())
}
