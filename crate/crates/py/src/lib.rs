//! Python bindings.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use rvos_core::ablation::{generate_suite, run_ablation, standard_variants};
use rvos_core::llm::ChatBackend;
use rvos_core::mask::{mask_iou, BinaryMask, MaskSequence};
use rvos_core::metrics;
use rvos_core::perception::{load_bundle, write_bundle, PerceptionBundle};
use rvos_core::pipeline::{evaluate_run, run_pipeline, Backends, PipelineConfig, RunResult};
use rvos_core::pose;
use rvos_core::query::heuristic_decompose;
use rvos_core::sim::suite::suite_scene;
use rvos_core::sim::{generate_scene, Scene, SceneSpec};
use rvos_core::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Image { .. } => PyIOError::new_err(e.to_string()),
        Error::Lookup(_) => PyKeyError::new_err(e.to_string()),
        Error::Endpoint(_) | Error::Backend(_) | Error::Model(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Converts through JSON so Python receives plain dicts and lists.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: serde::de::DeserializeOwned>(py: Python<'_>, value: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (value,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// A binary mask stored as column-major run lengths.
#[pyclass(name = "Mask", module = "rvos", frozen, from_py_object)]
#[derive(Clone)]
struct PyMask(BinaryMask);

#[pymethods]
impl PyMask {
    /// Builds a mask from rows of truthy values.
    #[staticmethod]
    fn from_rows(rows: Vec<Vec<Bound<'_, PyAny>>>) -> PyResult<Self> {
        let h = rows.len() as u32;
        let w = rows.first().map_or(0, |r| r.len()) as u32;
        if rows.iter().any(|r| r.len() as u32 != w) {
            return Err(PyValueError::new_err("rows have different lengths"));
        }
        let bits = rows
            .iter()
            .flatten()
            .map(|v| v.is_truthy())
            .collect::<PyResult<Vec<bool>>>()?;
        BinaryMask::from_bitmap(w, h, &bits).map(Self).map_err(err)
    }

    /// Parses the `{"size": [h, w], "counts": "..."}` wire form.
    #[staticmethod]
    fn from_rle(py: Python<'_>, rle: &Bound<'_, PyAny>) -> PyResult<Self> {
        from_py::<BinaryMask>(py, rle).map(Self)
    }

    fn to_rle(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0)
    }

    fn rows(&self) -> Vec<Vec<bool>> {
        let w = self.0.width() as usize;
        self.0.to_bitmap().chunks(w.max(1)).map(<[bool]>::to_vec).collect()
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.0.height()
    }

    #[getter]
    fn area(&self) -> u64 {
        self.0.area()
    }

    /// `(xmin, ymin, xmax, ymax)` or None when empty.
    #[getter]
    fn bbox(&self) -> Option<(f64, f64, f64, f64)> {
        self.0.bbox().map(|b| (b.xmin, b.ymin, b.xmax, b.ymax))
    }

    fn iou(&self, other: &PyMask) -> PyResult<f64> {
        mask_iou(&self.0, &other.0).map_err(err)
    }

    fn translate(&self, dx: i64, dy: i64) -> Self {
        Self(self.0.translate(dx, dy))
    }

    fn __eq__(&self, other: &PyMask) -> bool {
        self.0 == other.0
    }

    fn __repr__(&self) -> String {
        format!("Mask({}x{}, area={})", self.0.width(), self.0.height(), self.0.area())
    }
}

/// Pipeline configuration. Keyword arguments override the defaults and any
/// fields of `toml`.
#[pyclass(name = "Config", module = "rvos", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig(PipelineConfig);

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = "", **overrides))]
    fn new(py: Python<'_>, toml: &str, overrides: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<Self> {
        let base = PipelineConfig::from_toml_str(toml).map_err(err)?;
        let Some(extra) = overrides else { return Ok(Self(base)) };
        let mut value = serde_json::to_value(&base).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let extra: serde_json::Map<String, serde_json::Value> = from_py(py, extra.as_any())?;
        let obj = value.as_object_mut().expect("config is an object");
        for (k, v) in extra {
            if !obj.contains_key(&k) && k != "boundary_radius" {
                return Err(PyKeyError::new_err(format!("unknown config field {k:?}")));
            }
            obj.insert(k, v);
        }
        let config: PipelineConfig = serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
        config.validate().map_err(err)?;
        Ok(Self(config))
    }

    fn to_toml(&self) -> String {
        self.0.to_toml_string()
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0)
    }

    #[getter]
    fn variant(&self) -> String {
        self.0.variant_label()
    }

    fn __repr__(&self) -> String {
        format!("Config({})", self.0.variant_label())
    }
}

#[pyclass(name = "Bundle", module = "rvos", frozen)]
struct PyBundle(PerceptionBundle);

#[pymethods]
impl PyBundle {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_bundle(path).map(Self).map_err(err)
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        write_bundle(&self.0, path).map_err(err)
    }

    #[getter]
    fn video_id(&self) -> String {
        self.0.video_id().to_string()
    }

    #[getter]
    fn width(&self) -> u32 {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> u32 {
        self.0.height()
    }

    #[getter]
    fn frame_count(&self) -> usize {
        self.0.frame_count()
    }

    #[getter]
    fn keyframes(&self) -> Vec<usize> {
        self.0.schedule().indices().to_vec()
    }

    fn detections(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.detections())
    }

    fn embedding(&self, key: &str) -> Option<Vec<f64>> {
        self.0.embedding(key).map(<[f64]>::to_vec)
    }

    fn __repr__(&self) -> String {
        format!("Bundle({:?}, {} frames)", self.0.video_id(), self.0.frame_count())
    }
}

#[pyclass(name = "RunResult", module = "rvos", frozen)]
struct PyRunResult(RunResult);

#[pymethods]
impl PyRunResult {
    #[getter]
    fn selected_ids(&self) -> Vec<u32> {
        self.0.selected_ids.clone()
    }

    #[getter]
    fn candidate_count(&self) -> usize {
        self.0.candidate_count
    }

    #[getter]
    fn subset_size(&self) -> usize {
        self.0.subset_size
    }

    #[getter]
    fn fpv_activated(&self) -> bool {
        self.0.fpv_activated
    }

    #[getter]
    fn zero_candidates(&self) -> bool {
        self.0.zero_candidates
    }

    #[getter]
    fn low_confidence(&self) -> bool {
        self.0.low_confidence
    }

    #[getter]
    fn structured_query(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.structured_query)
    }

    #[getter]
    fn masks(&self) -> Vec<PyMask> {
        self.0.masks.frames.iter().cloned().map(PyMask).collect()
    }

    fn trace(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.trace)
    }

    fn results_json(&self) -> String {
        self.0.results_json()
    }

    fn trace_jsonl(&self) -> String {
        self.0.trace_jsonl()
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.0.write(&path, None).map_err(err)
    }

    fn render_overlays(&self, bundle: &PyBundle, out_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        rvos_core::overlay::render_overlays(&self.0, &bundle.0, &out_dir).map_err(err)
    }

    /// J, F and J&F against a list of ground-truth masks.
    #[pyo3(signature = (gt, radius = None))]
    fn evaluate(&self, py: Python<'_>, gt: Vec<PyMask>, radius: Option<u32>) -> PyResult<Py<PyAny>> {
        let seq = MaskSequence::new(self.0.video_id.clone(), gt.into_iter().map(|m| m.0).collect()).map_err(err)?;
        let report = evaluate_run(&self.0, &seq, radius).map_err(err)?;
        to_py(py, &report)
    }
}

#[pyclass(name = "Scene", module = "rvos", frozen)]
struct PyScene(Scene);

#[pymethods]
impl PyScene {
    #[getter]
    fn query(&self) -> String {
        self.0.query.clone()
    }

    #[getter]
    fn expected_query(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.0.expected_query)
    }

    #[getter]
    fn target_ids(&self) -> Vec<u32> {
        self.0.ground_truth.target_ids.clone()
    }

    /// Ground-truth target masks, one per frame.
    #[getter]
    fn target_masks(&self) -> Vec<PyMask> {
        self.0.ground_truth.target.frames.iter().cloned().map(PyMask).collect()
    }

    /// An independent copy of the scene's bundle.
    fn bundle(&self) -> PyBundle {
        PyBundle(self.0.bundle.clone())
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.0.write(&path).map_err(err)
    }
}

/// Renders a scene from a TOML spec.
#[pyfunction]
#[pyo3(signature = (spec_toml, seed = 0))]
fn simulate(spec_toml: &str, seed: u64) -> PyResult<PyScene> {
    let spec = SceneSpec::from_toml_str(spec_toml).map_err(err)?;
    generate_scene(&spec, seed).map(PyScene).map_err(err)
}

/// One scene of the standard evaluation suite.
#[pyfunction]
#[pyo3(signature = (index, seed = 0))]
fn suite(index: usize, seed: u64) -> PyResult<PyScene> {
    let s = suite_scene(index, seed);
    generate_scene(&s.spec, s.seed).map(PyScene).map_err(err)
}

/// Runs the pipeline. The language model endpoint is used only when the
/// configuration is not offline.
#[pyfunction]
#[pyo3(signature = (bundle, query, config = None))]
fn run(py: Python<'_>, bundle: &PyBundle, query: &str, config: Option<&PyConfig>) -> PyResult<PyRunResult> {
    let config = config.map(|c| c.0.clone()).unwrap_or_default();
    py.detach(|| {
        let client = if config.reasoner.offline {
            None
        } else {
            config.reasoner.client()
        };
        let backends = Backends {
            chat: client.as_ref().map(|c| c as &dyn ChatBackend),
            embeddings: None,
        };
        run_pipeline(&bundle.0, query, &config, backends)
    })
    .map(PyRunResult)
    .map_err(err)
}

/// Rule-based query decomposition.
#[pyfunction]
fn decompose(py: Python<'_>, query: &str) -> PyResult<Py<PyAny>> {
    to_py(py, &heuristic_decompose(query))
}

#[pyfunction]
fn jf_mean(j: f64, f: f64) -> f64 {
    metrics::jf_mean(j, f)
}

#[pyfunction]
fn should_activate(candidates: usize, k: u32, posture: &str) -> bool {
    pose::should_activate(candidates, k, posture)
}

#[pyfunction]
fn cosine(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    pose::cosine(&a, &b).map_err(err)
}

/// Component ablation over `count` generated suite scenes, offline.
#[pyfunction]
#[pyo3(signature = (count = 50, seed = 0, config = None))]
fn ablate(py: Python<'_>, count: usize, seed: u64, config: Option<&PyConfig>) -> PyResult<Py<PyAny>> {
    let mut config = config.map(|c| c.0.clone()).unwrap_or_default();
    config.reasoner.offline = true;
    let report = py
        .detach(|| {
            let scenes = generate_suite(count, seed)?;
            run_ablation(&scenes, &config, &standard_variants(), seed)
        })
        .map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn rvos(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMask>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyBundle>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(suite, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(jf_mean, m)?)?;
    m.add_function(wrap_pyfunction!(should_activate, m)?)?;
    m.add_function(wrap_pyfunction!(cosine, m)?)?;
    m.add_function(wrap_pyfunction!(ablate, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
