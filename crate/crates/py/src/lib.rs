//! Python bindings: box geometry and metrics, schedule sampling, and the
//! pipeline commands.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ctp_core::commands::{self, with_jobs};
use ctp_core::config::Config;
use ctp_core::eval::{self, SuccessCurve, SUCCESS_STEPS};
use ctp_core::toy::{self, ToyScene};
use ctp_core::transforms::{self, Preset};
use ctp_core::{geometry, BoundingBox, Error};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Image { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Axis-aligned box `(x, y, w, h)` in pixel edge coordinates, 0-based.
#[pyclass(name = "BoundingBox", module = "ctp", frozen, eq, from_py_object)]
#[derive(Clone, PartialEq)]
struct PyBox {
    inner: BoundingBox,
}

#[pymethods]
impl PyBox {
    #[new]
    fn new(x: f64, y: f64, w: f64, h: f64) -> PyResult<Self> {
        BoundingBox::new(x, y, w, h).map(|inner| PyBox { inner }).map_err(to_py)
    }

    #[getter]
    fn x(&self) -> f64 {
        self.inner.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.inner.y
    }

    #[getter]
    fn w(&self) -> f64 {
        self.inner.w
    }

    #[getter]
    fn h(&self) -> f64 {
        self.inner.h
    }

    fn area(&self) -> f64 {
        self.inner.area()
    }

    fn center(&self) -> (f64, f64) {
        self.inner.center()
    }

    fn as_tuple(&self) -> (f64, f64, f64, f64) {
        (self.inner.x, self.inner.y, self.inner.w, self.inner.h)
    }

    fn __repr__(&self) -> String {
        let b = self.inner;
        format!("BoundingBox({}, {}, {}, {})", b.x, b.y, b.w, b.h)
    }
}

#[pyfunction]
fn iou(a: PyRef<'_, PyBox>, b: PyRef<'_, PyBox>) -> f64 {
    geometry::iou(&a.inner, &b.inner)
}

#[pyfunction]
fn center_error(a: PyRef<'_, PyBox>, b: PyRef<'_, PyBox>) -> f64 {
    geometry::center_error(&a.inner, &b.inner)
}

/// Returns `(thresholds, success_rate)`.
#[pyfunction]
fn success_curve(pred: Vec<PyBox>, gt: Vec<PyBox>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let p: Vec<BoundingBox> = pred.iter().map(|b| b.inner).collect();
    let g: Vec<BoundingBox> = gt.iter().map(|b| b.inner).collect();
    let c = eval::success_curve(&p, &g).map_err(to_py)?;
    Ok((c.thresholds, c.success_rate))
}

#[pyfunction]
fn auc(success_rate: Vec<f64>) -> PyResult<f64> {
    if success_rate.len() != SUCCESS_STEPS {
        return Err(PyValueError::new_err(format!(
            "expected {SUCCESS_STEPS} success rates, got {}",
            success_rate.len()
        )));
    }
    Ok(eval::auc(&SuccessCurve { thresholds: eval::success_thresholds(), success_rate }))
}

/// Rows of the `k x k` cross-shaped blur kernel.
#[pyfunction]
fn shaking_blur_kernel(k: usize) -> PyResult<Vec<Vec<f64>>> {
    let kernel = transforms::shaking_blur_kernel(k).map_err(to_py)?;
    Ok(kernel.weights().chunks(kernel.size()).map(<[f64]>::to_vec).collect())
}

fn build_config(
    config: Option<PathBuf>,
    seed: Option<u64>,
    presets: Vec<String>,
    flip: Option<bool>,
    overrides: Option<BTreeMap<String, String>>,
) -> PyResult<Config> {
    let mut cfg = match config {
        Some(p) => Config::load(p).map_err(to_py)?,
        None => Config::default(),
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    for name in presets {
        let p = Preset::parse(&name).ok_or_else(|| PyValueError::new_err(format!("unknown preset {name:?}")))?;
        p.apply(&mut cfg.policy);
    }
    if let Some(f) = flip {
        cfg.policy.flip.enable = f;
    }
    for (k, v) in overrides.unwrap_or_default() {
        cfg.set(&k, &v).map_err(PyValueError::new_err)?;
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Draws one transform chain and returns it as a list of
/// `{"kind": ..., "params": {...}}` dicts.
#[pyfunction]
#[pyo3(signature = (seed, config=None, presets=Vec::new(), flip=None, overrides=None))]
fn sample_chain(
    py: Python<'_>,
    seed: u64,
    config: Option<PathBuf>,
    presets: Vec<String>,
    flip: Option<bool>,
    overrides: Option<BTreeMap<String, String>>,
) -> PyResult<Py<PyAny>> {
    let cfg = build_config(config, None, presets, flip, overrides)?;
    let chain = transforms::sample_chain(&cfg.policy, seed).map_err(to_py)?;
    json_to_py(py, &chain.steps)
}

/// Synthesizes every sequence under `data_root` into `out_dir` and returns
/// the manifest path.
#[pyfunction]
#[pyo3(signature = (data_root, out_dir, seed=0, num=100, config=None, presets=Vec::new(), flip=None,
                    overrides=None, sequences=Vec::new(), jobs=0))]
#[allow(clippy::too_many_arguments)]
fn synth(
    py: Python<'_>,
    data_root: PathBuf,
    out_dir: PathBuf,
    seed: u64,
    num: usize,
    config: Option<PathBuf>,
    presets: Vec<String>,
    flip: Option<bool>,
    overrides: Option<BTreeMap<String, String>>,
    sequences: Vec<String>,
    jobs: usize,
) -> PyResult<PathBuf> {
    let mut cfg = build_config(config, Some(seed), presets, flip, overrides)?;
    cfg.data_root = data_root;
    cfg.out_dir = out_dir;
    cfg.samples_per_sequence = num;
    let summary = py
        .detach(|| with_jobs(jobs, || commands::cmd_synth(&cfg, &sequences)))
        .map_err(to_py)?
        .map_err(to_py)?;
    Ok(summary.manifest)
}

/// Samples template/search pairs and returns the pairs manifest path.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, seed=0, count=100, materialize=true, config=None, jobs=0))]
#[allow(clippy::too_many_arguments)]
fn pairs(
    py: Python<'_>,
    manifest: PathBuf,
    out_dir: PathBuf,
    seed: u64,
    count: usize,
    materialize: bool,
    config: Option<PathBuf>,
    jobs: usize,
) -> PyResult<PathBuf> {
    let mut cfg = build_config(config, Some(seed), Vec::new(), None, None)?;
    cfg.out_dir = out_dir;
    cfg.pairs_per_sequence = count;
    cfg.materialize_pairs = materialize;
    let s = py
        .detach(|| with_jobs(jobs, || commands::cmd_pairs(&cfg, &manifest)))
        .map_err(to_py)?
        .map_err(to_py)?;
    Ok(s.manifest)
}

/// Tracks one sequence directory; returns the results file path.
#[pyfunction]
#[pyo3(signature = (sequence_dir, out_dir, init=None))]
fn track(py: Python<'_>, sequence_dir: PathBuf, out_dir: PathBuf, init: Option<PyBox>) -> PyResult<PathBuf> {
    let cfg = Config { out_dir, ..Default::default() };
    py.detach(|| commands::cmd_track(&cfg, &sequence_dir, init.map(|b| b.inner))).map_err(to_py)
}

/// Scores result files against ground truth; returns the report as a dict.
#[pyfunction]
fn evaluate(py: Python<'_>, results_dir: PathBuf, gt_root: PathBuf, out_dir: PathBuf) -> PyResult<Py<PyAny>> {
    let report = py.detach(|| commands::cmd_eval(&results_dir, &gt_root, &out_dir)).map_err(to_py)?;
    json_to_py(py, &report)
}

#[pyfunction]
fn stats(py: Python<'_>, manifest: PathBuf) -> PyResult<Py<PyAny>> {
    let s = commands::cmd_stats(&manifest).map_err(to_py)?;
    json_to_py(py, &s)
}

/// Manifest records as dicts, in file order.
#[pyfunction]
fn read_manifest(py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
    let records = ctp_core::pairs::read_manifest(&path).map_err(to_py)?;
    json_to_py(py, &records)
}

/// Writes procedural OTB-style sequences; returns their directories.
#[pyfunction]
#[pyo3(signature = (root, names, frames=8, width=160, height=120, seed=0))]
fn write_toy_dataset(
    root: PathBuf,
    names: Vec<String>,
    frames: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> PyResult<Vec<PathBuf>> {
    let scene = ToyScene { width, height, frames, ..Default::default() };
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    toy::write_dataset(&root, &names, &scene, seed).map_err(to_py)
}

#[pymodule]
fn ctp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBox>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(center_error, m)?)?;
    m.add_function(wrap_pyfunction!(success_curve, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(shaking_blur_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(sample_chain, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(pairs, m)?)?;
    m.add_function(wrap_pyfunction!(track, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(stats, m)?)?;
    m.add_function(wrap_pyfunction!(read_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(write_toy_dataset, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
