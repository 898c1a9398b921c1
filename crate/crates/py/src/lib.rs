//! Python bindings. Rasters cross the boundary as flat `float` lists plus a shape.

use hysharp_core::loss::CorrWindowSpec;
use hysharp_core::metrics::{assess_full, assess_reduced, DEFAULT_Q_BLOCK};
use hysharp_core::raster::{load_pan, load_raster, save_pan, save_raster};
use hysharp_core::synth::{generate_scene, SceneSpec};
use hysharp_core::tuner::phase_signal;
use hysharp_core::{
    compute_iteration_budget, exp_interpolate, mtf_downscale, sharpen_cube, Error, Execution, HsCube, MtfSpec,
    PairedScene, PanImage, TuneConfig,
};
use ndarray::{Array2, Array3};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn py_err(e: Error) -> PyErr {
    let msg = format!("{}: {e}", e.kind());
    match e {
        Error::Io(_) => PyIOError::new_err(msg),
        e if e.is_input_error() => PyValueError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn json_to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

/// Single-band image at PAN resolution.
#[pyclass(name = "PanImage", module = "hysharp", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyPan {
    inner: PanImage,
}

#[pymethods]
impl PyPan {
    /// Build from row-major `data` of length `height * width`.
    #[new]
    fn new(data: Vec<f32>, height: usize, width: usize) -> PyResult<Self> {
        let arr = Array2::from_shape_vec((height, width), data).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner: PanImage::new(arr).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: load_pan(path).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_pan(path, &self.inner).map_err(py_err)
    }

    /// `(height, width)`.
    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.height(), self.inner.width())
    }

    fn to_list(&self) -> Vec<f32> {
        self.inner.view().iter().copied().collect()
    }

    fn __repr__(&self) -> String {
        format!("PanImage(height={}, width={})", self.inner.height(), self.inner.width())
    }
}

/// Band-sequential cube.
#[pyclass(name = "HsCube", module = "hysharp", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyCube {
    inner: HsCube,
}

#[pymethods]
impl PyCube {
    /// Build from band-major `data` of length `bands * height * width`.
    #[new]
    #[pyo3(signature = (data, bands, height, width, wavelengths=None))]
    fn new(data: Vec<f32>, bands: usize, height: usize, width: usize, wavelengths: Option<Vec<f64>>) -> PyResult<Self> {
        let arr =
            Array3::from_shape_vec((bands, height, width), data).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner: HsCube::with_wavelengths(arr, wavelengths).map_err(py_err)? })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: load_raster(path).map_err(py_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_raster(path, &self.inner).map_err(py_err)
    }

    /// `(bands, height, width)`.
    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        (self.inner.bands(), self.inner.height(), self.inner.width())
    }

    #[getter]
    fn wavelengths(&self) -> Option<Vec<f64>> {
        self.inner.wavelengths().map(|w| w.to_vec())
    }

    fn band(&self, b: usize) -> PyResult<Vec<f32>> {
        if b >= self.inner.bands() {
            return Err(PyValueError::new_err(format!("band {b} out of range")));
        }
        Ok(self.inner.band(b).iter().copied().collect())
    }

    fn to_list(&self) -> Vec<f32> {
        self.inner.view().iter().copied().collect()
    }

    fn __repr__(&self) -> String {
        let (b, h, w) = self.shape();
        format!("HsCube(bands={b}, height={h}, width={w})")
    }
}

/// Tuning configuration; keyword arguments override the defaults.
#[pyclass(name = "TuneConfig", module = "hysharp", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: TuneConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut v = serde_json::to_value(TuneConfig::default()).expect("serializable");
        if let Some(kw) = kwargs {
            let json = kw.py().import("json")?.call_method1("dumps", (kw,))?.extract::<String>()?;
            let over: Value = serde_json::from_str(&json).map_err(|e| PyValueError::new_err(e.to_string()))?;
            for (k, x) in over.as_object().into_iter().flatten() {
                v[k] = x.clone();
            }
        }
        Self::from_json(&v.to_string())
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { inner: TuneConfig::from_json(text).map_err(py_err)? })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("serializable")
    }

    fn __repr__(&self) -> String {
        format!("TuneConfig({})", self.to_json())
    }
}

fn config(cfg: Option<&PyConfig>) -> TuneConfig {
    cfg.map_or_else(TuneConfig::default, |c| c.inner.clone())
}

/// Synthetic paired scene. Returns a dict with `truth`, `pan`, `hs`,
/// `inversion_bands` and `visible_bands`.
#[pyfunction]
#[pyo3(signature = (spec_json=None, seed=None))]
fn simulate<'py>(py: Python<'py>, spec_json: Option<&str>, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let mut spec: SceneSpec = match spec_json {
        Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => SceneSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let s = generate_scene(&spec).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("truth", PyCube { inner: s.truth })?;
    d.set_item("pan", PyPan { inner: s.pan })?;
    d.set_item("hs", PyCube { inner: s.coarse })?;
    d.set_item("inversion_bands", s.inversion_bands)?;
    d.set_item("visible_bands", s.visible_bands)?;
    Ok(d)
}

/// Result of [`sharpen`].
#[pyclass(name = "SharpenResult", module = "hysharp", frozen)]
pub struct PySharpenResult {
    #[pyo3(get)]
    fused: PyCube,
    #[pyo3(get)]
    total_iterations: usize,
    bands: Value,
    profile: Value,
    trace: String,
}

#[pymethods]
impl PySharpenResult {
    /// Per-band summaries as dicts.
    #[getter]
    fn bands<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.bands)
    }

    #[getter]
    fn profile<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.profile)
    }

    /// Loss trace as CSV text.
    #[getter]
    fn trace_csv(&self) -> &str {
        &self.trace
    }
}

/// Tune band by band and fuse. Releases the GIL while running.
#[pyfunction]
#[pyo3(signature = (pan, hs, config=None, deterministic=false))]
fn sharpen(
    py: Python<'_>,
    pan: &PyPan,
    hs: &PyCube,
    config: Option<&PyConfig>,
    deterministic: bool,
) -> PyResult<PySharpenResult> {
    let cfg = self::config(config);
    let scene = PairedScene::new(pan.inner.clone(), hs.inner.clone()).map_err(py_err)?;
    let exec = if deterministic { Execution::Sequential } else { Execution::Parallel };
    let out = py.detach(|| exec.install(|| sharpen_cube(&scene, &cfg))).map_err(py_err)?.map_err(py_err)?;
    let mut trace = Vec::new();
    out.trace.write_csv(&mut trace).map_err(py_err)?;
    Ok(PySharpenResult {
        fused: PyCube { inner: out.fused },
        total_iterations: out.total_iterations,
        bands: serde_json::to_value(&out.bands).expect("serializable"),
        profile: serde_json::to_value(&out.profile).expect("serializable"),
        trace: String::from_utf8(trace).expect("csv is utf-8"),
    })
}

/// Polynomial (EXP) interpolation of every band by `ratio`.
#[pyfunction]
fn interpolate(hs: &PyCube, ratio: usize) -> PyResult<PyCube> {
    let inner = hs.inner.map_bands(|b| exp_interpolate(b, ratio)).map_err(py_err)?;
    Ok(PyCube { inner })
}

/// MTF-matched blur and decimation of every band.
#[pyfunction]
#[pyo3(signature = (cube, ratio, gain=0.3))]
fn degrade(cube: &PyCube, ratio: usize, gain: f64) -> PyResult<PyCube> {
    let mtf = MtfSpec::new(gain, hysharp_core::resample::DEFAULT_MTF_HALF_WIDTH, ratio).map_err(py_err)?;
    let inner = cube.inner.map_bands(|b| mtf_downscale(b, &mtf)).map_err(py_err)?;
    Ok(PyCube { inner })
}

/// Quality report as a dict. Reduced resolution needs `gt`; full resolution
/// needs `hs` and `pan`.
#[pyfunction]
#[pyo3(signature = (fused, gt=None, hs=None, pan=None, ratio=None, mtf_gain=0.3, sigma=None))]
#[allow(clippy::too_many_arguments)]
fn assess<'py>(
    py: Python<'py>,
    fused: &PyCube,
    gt: Option<&PyCube>,
    hs: Option<&PyCube>,
    pan: Option<&PyPan>,
    ratio: Option<usize>,
    mtf_gain: f64,
    sigma: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let ratio = match (ratio, hs) {
        (Some(r), _) => r,
        (None, Some(h)) if h.inner.width() > 0 && fused.inner.width() % h.inner.width() == 0 => {
            fused.inner.width() / h.inner.width()
        }
        _ => return Err(PyValueError::new_err("ratio: pass ratio= or a compatible hs cube")),
    };
    let mtf = MtfSpec::new(mtf_gain, hysharp_core::resample::DEFAULT_MTF_HALF_WIDTH, ratio).map_err(py_err)?;
    let report = match (gt, hs, pan) {
        (Some(gt), _, _) => assess_reduced(&fused.inner, &gt.inner, hs.map(|h| &h.inner), &mtf, DEFAULT_Q_BLOCK),
        (None, Some(hs), Some(pan)) => {
            let corr = CorrWindowSpec::new(sigma.unwrap_or(ratio)).map_err(py_err)?;
            assess_full(&fused.inner, &hs.inner, &pan.inner, &mtf, &corr, DEFAULT_Q_BLOCK)
        }
        _ => return Err(PyValueError::new_err("pass gt= for reduced resolution or hs= and pan= for full")),
    }
    .map_err(py_err)?;
    json_to_py(py, &report)
}

/// Per-band iteration caps for the given band correlations.
#[pyfunction]
#[pyo3(signature = (correlations, config=None))]
fn iteration_budget<'py>(
    py: Python<'py>,
    correlations: Vec<f64>,
    config: Option<&PyConfig>,
) -> PyResult<Bound<'py, PyAny>> {
    let b = compute_iteration_budget(&correlations, &self::config(config)).map_err(py_err)?;
    json_to_py(py, &b)
}

/// Two-threshold phase ("ON"/"OFF") for each normalized spectral loss.
#[pyfunction]
#[pyo3(signature = (ratios, config=None))]
fn phases(ratios: Vec<f64>, config: Option<&PyConfig>) -> Vec<&'static str> {
    phase_signal(&ratios, &self::config(config)).into_iter().map(|p| p.as_str()).collect()
}

#[pymodule]
fn hysharp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPan>()?;
    m.add_class::<PyCube>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PySharpenResult>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sharpen, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(assess, m)?)?;
    m.add_function(wrap_pyfunction!(iteration_budget, m)?)?;
    m.add_function(wrap_pyfunction!(phases, m)?)?;
    Ok(())
}
