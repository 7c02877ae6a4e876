//! Python bindings: images, compositions, synthetic scenes, the solver and
//! the evaluation metrics.

use std::collections::BTreeMap;
use std::path::PathBuf;

use intrinsic_core::colorspace::LinearImage;
use intrinsic_core::metrics::{self, Field};
use intrinsic_core::naming::{self, ColorComposition, ColorTerm, NamingModel};
use intrinsic_core::scenes::{self, SceneParams, Transfer};
use intrinsic_core::solver::{self, RunReport, SolverConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: intrinsic_core::Error) -> PyErr {
    match e {
        intrinsic_core::Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn transfer(name: &str) -> PyResult<Transfer> {
    match name {
        "srgb" => Ok(Transfer::Srgb),
        "linear" => Ok(Transfer::Linear),
        other => Err(PyValueError::new_err(format!("unknown transfer {other:?}"))),
    }
}

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (value.to_string(),))?.unbind())
}

fn model() -> PyResult<NamingModel> {
    NamingModel::bundled().map_err(err)
}

/// Normalized weights over the eleven basic color terms.
#[pyclass(name = "Composition", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyComposition(ColorComposition);

#[pymethods]
impl PyComposition {
    /// From a `{term: weight}` mapping whose weights sum to one.
    #[new]
    fn new(values: BTreeMap<String, f64>) -> PyResult<Self> {
        let json = serde_json::to_value(&values).map_err(|e| PyValueError::new_err(e.to_string()))?;
        ColorComposition::from_json_value(&json).map(Self).map_err(err)
    }

    #[staticmethod]
    fn uniform() -> Self {
        Self(ColorComposition::uniform())
    }

    #[staticmethod]
    fn terms() -> Vec<&'static str> {
        ColorTerm::ALL.iter().map(|t| t.name()).collect()
    }

    fn to_dict(&self) -> BTreeMap<String, f64> {
        self.0.to_map()
    }

    fn dominant(&self) -> &'static str {
        self.0.dominant().name()
    }

    fn __getitem__(&self, term: &str) -> PyResult<f64> {
        ColorTerm::from_name(term)
            .map(|t| self.0.get(t))
            .ok_or_else(|| PyValueError::new_err(format!("unknown color term {term:?}")))
    }

    fn __repr__(&self) -> String {
        format!("Composition({})", self.0.to_json_value())
    }
}

/// Linear RGB raster with a validity mask.
#[pyclass(name = "Image", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyImage(LinearImage);

#[pymethods]
impl PyImage {
    /// Row-major `(r, g, b)` tuples; every pixel is valid unless `mask` says otherwise.
    #[new]
    #[pyo3(signature = (width, height, pixels, mask=None))]
    fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>, mask: Option<Vec<bool>>) -> PyResult<Self> {
        let mask = mask.unwrap_or_else(|| vec![true; pixels.len()]);
        LinearImage::new(width, height, pixels, mask).map(Self).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (path, transfer="srgb"))]
    fn load(path: PathBuf, transfer: &str) -> PyResult<Self> {
        scenes::load_image(&path, self::transfer(transfer)?).map(Self).map_err(err)
    }

    #[pyo3(signature = (path, transfer="srgb"))]
    fn save(&self, path: PathBuf, transfer: &str) -> PyResult<()> {
        scenes::save_image(&path, &self.0, self::transfer(transfer)?).map_err(err)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    fn pixels(&self) -> Vec<[f64; 3]> {
        self.0.pixels().to_vec()
    }

    fn mask(&self) -> Vec<bool> {
        self.0.mask().to_vec()
    }

    /// Channel mean per pixel.
    fn gray(&self) -> Vec<f64> {
        self.0.gray()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// A rendered synthetic scene and its ground truth.
#[pyclass(name = "Scene", frozen)]
struct PyScene(scenes::SyntheticScene);

#[pymethods]
impl PyScene {
    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    #[getter]
    fn image(&self) -> PyImage {
        PyImage(self.0.image.clone())
    }

    #[getter]
    fn reflectance(&self) -> PyImage {
        PyImage(self.0.gt_reflectance.clone())
    }

    #[getter]
    fn shading(&self) -> PyImage {
        PyImage(self.0.gt_shading.clone())
    }

    #[getter]
    fn composition(&self) -> PyComposition {
        PyComposition(self.0.gt_composition)
    }

    #[getter]
    fn illuminant(&self) -> [f64; 3] {
        self.0.gt_illuminant.rgb
    }

    #[getter]
    fn shadow(&self) -> Vec<bool> {
        self.0.shadow.clone()
    }
}

/// Output of [`decompose`].
#[pyclass(name = "Decomposition", frozen)]
struct PyDecomposition {
    out: solver::DecomposeOutput,
    report: RunReport,
}

#[pymethods]
impl PyDecomposition {
    #[getter]
    fn reflectance(&self) -> PyImage {
        PyImage(self.out.decomposition.reflectance.clone())
    }

    #[getter]
    fn shading(&self) -> PyImage {
        PyImage(self.out.decomposition.shading.clone())
    }

    #[getter]
    fn illuminant(&self) -> [f64; 3] {
        self.out.decomposition.illuminant.rgb
    }

    #[getter]
    fn achieved(&self) -> PyComposition {
        PyComposition(self.out.decomposition.achieved)
    }

    /// Color term of each recovered reflectance pixel, `None` off the mask.
    fn names(&self) -> Vec<Option<&'static str>> {
        self.out.decomposition.names.iter().map(|n| n.map(|t| t.name())).collect()
    }

    fn trace_csv(&self) -> String {
        solver::trace_csv(&self.out.state.trace)
    }

    fn report(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        json_to_py(py, &self.report.to_json())
    }

    /// Writes the standard artifact set into `out_dir`.
    fn save(&self, out_dir: PathBuf) -> PyResult<Vec<PathBuf>> {
        scenes::save_outputs(&out_dir, &self.out.decomposition, &self.out.state.trace, &self.report.to_json()).map_err(err)
    }
}

/// Renders a synthetic scene; `params` is a JSON object of scene parameters.
#[pyfunction]
#[pyo3(signature = (seed, params=None))]
fn synth(seed: u64, params: Option<&str>) -> PyResult<PyScene> {
    let params: SceneParams = match params {
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => SceneParams::default(),
    };
    scenes::generate_scene(seed, &params, &model()?).map(PyScene).map_err(err)
}

/// Runs the solver. `config` is a JSON object of solver options.
#[pyfunction]
#[pyo3(signature = (image, annotation, config=None, seed=None, color_naming=true))]
fn decompose(
    py: Python<'_>,
    image: &PyImage,
    annotation: &PyComposition,
    config: Option<&str>,
    seed: Option<u64>,
    color_naming: bool,
) -> PyResult<PyDecomposition> {
    let mut cfg = match config {
        Some(s) => SolverConfig::from_json_str(s).map_err(err)?,
        None => SolverConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    cfg.color_naming &= color_naming;
    let model = model()?;
    let (img, ann) = (image.0.clone(), annotation.0);
    let out = py
        .detach(|| solver::decompose(&img, &ann, &cfg, &model, &mut |_| {}))
        .map_err(err)?;
    let report = RunReport::new(&out, &cfg);
    Ok(PyDecomposition { out, report })
}

/// Naming distribution of one sRGB color in `[0, 1]`.
#[pyfunction]
fn name_color(rgb: [f64; 3]) -> PyResult<PyComposition> {
    Ok(PyComposition(naming::name_color(&model()?, &rgb)))
}

/// Composition of an image from naming each valid pixel.
#[pyfunction]
fn compose_image(image: &PyImage) -> PyResult<PyComposition> {
    naming::auto_compose_image(&model()?, &image.0).map(PyComposition).map_err(err)
}

/// Correlation, MSE, LMSE and aLMSE of reflectance, shading and their mean.
#[pyfunction]
fn evaluate(
    py: Python<'_>,
    reflectance: &PyImage,
    shading: &PyImage,
    gt_reflectance: &PyImage,
    gt_shading: &PyImage,
) -> PyResult<Py<PyAny>> {
    let mask: Vec<bool> = gt_reflectance.0.mask().iter().zip(reflectance.0.mask()).map(|(a, b)| *a && *b).collect();
    let m = metrics::evaluate_images(&reflectance.0, &shading.0, &gt_reflectance.0, &gt_shading.0, &mask).map_err(err)?;
    let v = serde_json::to_value(m).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

/// Local scale-invariant MSE of two row-major grayscale fields.
#[pyfunction]
#[pyo3(signature = (estimate, truth, width, height, window=20, stride=10))]
fn lmse(estimate: Vec<f64>, truth: Vec<f64>, width: usize, height: usize, window: usize, stride: usize) -> PyResult<f64> {
    let mask = vec![true; truth.len()];
    let e = Field::new(&estimate, &mask, width, height).map_err(err)?;
    let g = Field::new(&truth, &mask, width, height).map_err(err)?;
    metrics::lmse(&e, &g, window, stride).map_err(err)
}

#[pymodule]
fn intrinsic(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyComposition>()?;
    m.add_class::<PyImage>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyDecomposition>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(name_color, m)?)?;
    m.add_function(wrap_pyfunction!(compose_image, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(lmse, m)?)?;
    Ok(())
}
