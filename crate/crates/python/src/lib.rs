//! Python bindings: scenarios, metrics, losses, the prototype pool and the
//! experiment harness.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use disco::harness::ExperimentConfig;
use disco::losses::{self, LossOptions, Reduction};
use disco::metrics::{self, AccuracyMatrix, Prediction};
use disco::scenario::{self, ClassId, ContinualScenario};
use disco::DiscoError;

fn py_err(e: DiscoError) -> PyErr {
    if e.is_config() {
        PyValueError::new_err(e.to_string())
    } else {
        match e {
            DiscoError::Io { .. } | DiscoError::Training { .. } | DiscoError::Artifact { .. } => {
                PyRuntimeError::new_err(e.to_string())
            }
            other => PyValueError::new_err(other.to_string()),
        }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<Array2<f64>> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err(format!(
            "{what}: rows must have equal length"
        )));
    }
    Array2::from_shape_vec((rows.len(), cols), rows.concat())
        .map_err(|e| PyValueError::new_err(format!("{what}: {e}")))
}

/// A class-incremental (or CILD) task sequence.
#[pyclass(name = "Scenario", module = "disco_py", frozen)]
struct PyScenario {
    inner: ContinualScenario,
}

#[pymethods]
impl PyScenario {
    /// Parse the text form written to `scenario.txt`.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Ok(PyScenario {
            inner: ContinualScenario::from_text(text).map_err(py_err)?,
        })
    }

    #[getter]
    fn num_tasks(&self) -> usize {
        self.inner.num_tasks()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    #[getter]
    fn mode(&self) -> &'static str {
        match self.inner.mode() {
            scenario::ScenarioMode::Cil => "CIL",
            scenario::ScenarioMode::Cild => "CILD",
        }
    }

    /// Label set of every task, in task order.
    fn label_sets(&self) -> Vec<Vec<ClassId>> {
        self.inner
            .tasks()
            .iter()
            .map(|t| t.label_set.clone())
            .collect()
    }

    /// Domain of every task (`None` for plain CIL).
    fn domains(&self) -> Vec<Option<String>> {
        self.inner
            .tasks()
            .iter()
            .map(|t| t.domain_id.clone())
            .collect()
    }

    /// One-based task that owns `label`, if any.
    fn task_of(&self, label: ClassId) -> Option<usize> {
        self.inner.task_of(label)
    }

    /// Attach one deterministic input transform per task.
    fn with_synthetic_domains(&self, order: Vec<String>) -> PyResult<Self> {
        Ok(PyScenario {
            inner: self
                .inner
                .attach_synthetic_domains(&order)
                .map_err(py_err)?,
        })
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenario(mode={}, num_tasks={}, num_classes={})",
            self.mode(),
            self.inner.num_tasks(),
            self.inner.num_classes()
        )
    }
}

#[pyfunction]
fn split_even(num_classes: usize, num_tasks: usize, seed: u64) -> PyResult<PyScenario> {
    Ok(PyScenario {
        inner: scenario::split_even(num_classes, num_tasks, seed).map_err(py_err)?,
    })
}

#[pyfunction]
fn split_base_increment(
    num_classes: usize,
    base: usize,
    increments: usize,
    seed: u64,
) -> PyResult<PyScenario> {
    Ok(PyScenario {
        inner: scenario::split_base_increment(num_classes, base, increments, seed)
            .map_err(py_err)?,
    })
}

fn accuracy(rows: Vec<Vec<f64>>) -> PyResult<AccuracyMatrix> {
    AccuracyMatrix::new(rows).map_err(py_err)
}

/// `(AA_k per k, AA)` of a lower-triangular accuracy matrix in percent.
#[pyfunction]
fn average_accuracy(rows: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, f64)> {
    Ok(metrics::average_accuracy(&accuracy(rows)?))
}

/// `(f_j per old task, FM)`; needs at least two tasks.
#[pyfunction]
fn forgetting_measure(rows: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, f64)> {
    metrics::forgetting_measure(&accuracy(rows)?).map_err(py_err)
}

#[pyfunction]
fn initial_accuracy(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(metrics::initial_accuracy(&accuracy(rows)?))
}

/// `(PIV, PFTS, IS per transition, FTS per transition)` of a snapshot chain
/// `s_0..s_T`.
#[pyfunction]
fn piv_pfts(snapshots: Vec<Vec<f64>>) -> PyResult<(f64, f64, Vec<f64>, Vec<f64>)> {
    let r = metrics::piv_pfts(&snapshots).map_err(py_err)?;
    Ok((r.piv, r.pfts, r.interference, r.transfer))
}

/// Sorted indices of the high-magnitude set of one update and its threshold.
#[pyfunction]
fn high_magnitude_set(delta: Vec<f64>) -> PyResult<(Vec<usize>, f64)> {
    let p = metrics::high_magnitude_set(&delta).map_err(py_err)?;
    Ok((p.high.into_iter().collect(), p.threshold))
}

/// TIA in percent from `(label, predicted)` pairs.
#[pyfunction]
fn task_inference_accuracy(pairs: Vec<(ClassId, ClassId)>, scenario: &PyScenario) -> PyResult<f64> {
    let preds: Vec<Prediction> = pairs
        .into_iter()
        .map(|(label, predicted)| Prediction { label, predicted })
        .collect();
    metrics::task_inference_accuracy(&preds, &scenario.inner).map_err(py_err)
}

/// ITA of task `j` in percent; `logits` has one column per `head_labels`.
#[pyfunction]
fn intra_task_accuracy(
    logits: Vec<Vec<f64>>,
    head_labels: Vec<ClassId>,
    labels: Vec<ClassId>,
    scenario: &PyScenario,
    j: usize,
) -> PyResult<f64> {
    let m = matrix(&logits, "logits")?;
    metrics::intra_task_accuracy(m.view(), &head_labels, &labels, &scenario.inner, j)
        .map_err(py_err)
}

#[pyfunction]
fn cosine_similarity(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    losses::cosine_similarity(&x, &y).map_err(py_err)
}

/// `ln(1 + exp(1 − S(a,p) + S(a,n)))`.
#[pyfunction]
fn triplet(a: Vec<f64>, p: Vec<f64>, n: Vec<f64>) -> PyResult<f64> {
    losses::triplet(&a, &p, &n).map_err(py_err)
}

/// Task-level contrast of projected anchors against the current prototype
/// and earlier task prototypes.
#[pyfunction]
fn tcon(anchors: Vec<Vec<f64>>, positive: Vec<f64>, negatives: Vec<Vec<f64>>) -> PyResult<f64> {
    let m = matrix(&anchors, "anchors")?;
    losses::tcon(m.view(), &positive, &negatives, &LossOptions::default()).map_err(py_err)
}

/// Cross-task contrastive distillation over a replay batch.
#[pyfunction]
#[pyo3(signature = (student, teacher, labels, reduction = "mean"))]
fn ccd(
    student: Vec<Vec<f64>>,
    teacher: Vec<Vec<f64>>,
    labels: Vec<ClassId>,
    reduction: &str,
) -> PyResult<f64> {
    let reduction = match reduction {
        "mean" => Reduction::Mean,
        "sum" => Reduction::Sum,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown reduction {other:?}"
            )))
        }
    };
    let s = matrix(&student, "student")?;
    let t = matrix(&teacher, "teacher")?;
    let options = LossOptions {
        ccd_reduction: reduction,
        ..LossOptions::default()
    };
    losses::ccd(s.view(), t.view(), &labels, &options).map_err(py_err)
}

/// Running-mean task prototypes.
#[pyclass(name = "PrototypePool", module = "disco_py")]
struct PyPrototypePool {
    inner: disco::prototypes::PrototypePool,
}

#[pymethods]
impl PyPrototypePool {
    #[new]
    fn new() -> Self {
        PyPrototypePool {
            inner: disco::prototypes::PrototypePool::new(),
        }
    }

    /// Fold in one batch prototype; returns the running mean.
    fn accumulate(&mut self, batch: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.inner.accumulate(&batch).map_err(py_err)?.vector)
    }

    fn finalize_task(&mut self, t: usize) -> PyResult<Vec<f64>> {
        Ok(self.inner.finalize_task(t).map_err(py_err)?.to_vec())
    }

    fn get(&self, t: usize) -> Option<Vec<f64>> {
        self.inner.get(t).map(<[f64]>::to_vec)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Parse and validate a config document; returns the resolved text.
#[pyfunction]
fn resolve_config(text: &str) -> PyResult<String> {
    Ok(ExperimentConfig::parse(text).map_err(py_err)?.to_text())
}

/// Train the config once per seed under `out`; returns each run's
/// `summary.json` content.
#[pyfunction]
#[pyo3(signature = (config_text, out, seeds = None))]
fn run_experiment(
    py: Python<'_>,
    config_text: &str,
    out: PathBuf,
    seeds: Option<Vec<u64>>,
) -> PyResult<Vec<String>> {
    let config = ExperimentConfig::parse(config_text).map_err(py_err)?;
    let seeds = seeds.unwrap_or_else(|| config.seeds.clone());
    let runs = py
        .detach(|| disco::harness::run(&config, &out, &seeds))
        .map_err(py_err)?;
    Ok(runs
        .iter()
        .map(|r| serde_json::to_string(r).expect("summary serializes"))
        .collect())
}

/// Metrics over run directories (or parents of `seed_*` runs) as JSON.
#[pyfunction]
fn report(paths: Vec<PathBuf>) -> PyResult<String> {
    let r = disco::harness::report(&paths).map_err(py_err)?;
    Ok(serde_json::to_string(&r).expect("report serializes"))
}

#[pymodule]
fn disco_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyScenario>()?;
    m.add_class::<PyPrototypePool>()?;
    for f in [
        wrap_pyfunction!(split_even, m)?,
        wrap_pyfunction!(split_base_increment, m)?,
        wrap_pyfunction!(average_accuracy, m)?,
        wrap_pyfunction!(forgetting_measure, m)?,
        wrap_pyfunction!(initial_accuracy, m)?,
        wrap_pyfunction!(piv_pfts, m)?,
        wrap_pyfunction!(high_magnitude_set, m)?,
        wrap_pyfunction!(task_inference_accuracy, m)?,
        wrap_pyfunction!(intra_task_accuracy, m)?,
        wrap_pyfunction!(cosine_similarity, m)?,
        wrap_pyfunction!(triplet, m)?,
        wrap_pyfunction!(tcon, m)?,
        wrap_pyfunction!(ccd, m)?,
        wrap_pyfunction!(resolve_config, m)?,
        wrap_pyfunction!(run_experiment, m)?,
        wrap_pyfunction!(report, m)?,
    ] {
        m.add_function(f)?;
    }
    Ok(())
}
