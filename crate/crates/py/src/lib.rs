//! Python bindings for the fourd toolkit.

use std::path::PathBuf;

use fourd::attention::{build_mask, TVMask};
use fourd::flow::{euler_sample, toy_dataset, train_toy, ToyConfig, ToyDataset, ToyMlp};
use fourd::geometry::{interpolate_trajectory, read_cameras, write_cameras, CameraPose};
use fourd::imaging::Image;
use fourd::pipeline::{psnr as psnr_db, run_benchmark, PipelineConfig, SceneBundle, SyntheticScene};
use fourd::splat::{render_scene, ssim as ssim_index, RasterConfig, SceneState};
use fourd::Error;
use nalgebra::Vector3;
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Input(_) | Error::Format(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn config(json: Option<&str>) -> PyResult<PipelineConfig> {
    match json {
        Some(s) => PipelineConfig::from_json(s).map_err(to_py),
        None => Ok(PipelineConfig::default()),
    }
}

fn image(width: usize, height: usize, data: Vec<f64>) -> PyResult<Image> {
    Image::from_data(width, height, data).map_err(to_py)
}

/// View/time attention mask.
#[pyclass(name = "Mask", frozen)]
struct PyMask(TVMask);

#[pymethods]
impl PyMask {
    #[new]
    fn new(views: usize, frames: usize) -> PyResult<Self> {
        build_mask(views, frames).map(Self).map_err(to_py)
    }

    #[getter]
    fn n_slots(&self) -> usize {
        self.0.n_views() * self.0.n_time()
    }

    fn allows(&self, vi: usize, ti: usize, vj: usize, tj: usize) -> bool {
        self.0.pair(vi, ti, vj, tj)
    }

    fn true_count(&self) -> usize {
        self.0.true_count()
    }

    fn intra_count(&self) -> usize {
        self.0.intra_count()
    }

    /// Closed-form density as `(numerator, denominator)`.
    fn density(&self) -> (u64, u64) {
        let r = fourd::attention::mask_density(self.0.n_views(), self.0.half());
        (*r.numer(), *r.denom())
    }

    fn to_pbm(&self) -> String {
        self.0.to_pbm()
    }
}

/// Pinhole camera.
#[pyclass(name = "Camera", frozen, from_py_object)]
#[derive(Clone)]
struct PyCamera(CameraPose);

#[pymethods]
impl PyCamera {
    #[staticmethod]
    fn look_at(eye: [f64; 3], target: [f64; 3], focal: f64, width: usize, height: usize) -> PyResult<Self> {
        CameraPose::look_at(Vector3::from(eye), Vector3::from(target), focal, focal, width, height)
            .map(Self)
            .map_err(to_py)
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height
    }

    #[getter]
    fn center(&self) -> [f64; 3] {
        self.0.center().into()
    }

    fn __repr__(&self) -> String {
        let c = self.0.center();
        format!("Camera(center=({:.3}, {:.3}, {:.3}), {}x{})", c.x, c.y, c.z, self.0.width, self.0.height)
    }
}

#[pyfunction]
fn load_cameras(path: PathBuf) -> PyResult<Vec<PyCamera>> {
    Ok(read_cameras(&path).map_err(to_py)?.into_iter().map(PyCamera).collect())
}

#[pyfunction]
fn save_cameras(path: PathBuf, cameras: Vec<PyCamera>) -> PyResult<()> {
    let cams: Vec<_> = cameras.into_iter().map(|c| c.0).collect();
    write_cameras(&path, &cams).map_err(to_py)
}

/// `n` poses sampled uniformly around the closed camera loop.
#[pyfunction]
fn trajectory(cameras: Vec<PyCamera>, n: usize) -> PyResult<Vec<PyCamera>> {
    let cams: Vec<_> = cameras.into_iter().map(|c| c.0).collect();
    Ok(interpolate_trajectory(&cams, n).map_err(to_py)?.poses.into_iter().map(PyCamera).collect())
}

/// Trained two-dimensional toy flow.
#[pyclass(name = "ToyFlow", frozen)]
struct PyToyFlow {
    model: ToyMlp,
    #[pyo3(get)]
    losses: Vec<f64>,
}

#[pymethods]
impl PyToyFlow {
    #[new]
    #[pyo3(signature = (dataset="mixture", epochs=60, seed=7, n_data=10_000))]
    fn new(dataset: &str, epochs: usize, seed: u64, n_data: usize) -> PyResult<Self> {
        let kind: ToyDataset = dataset.parse().map_err(to_py)?;
        let data = toy_dataset(kind, n_data, seed ^ 1);
        let trained = train_toy(&data, epochs, seed, &ToyConfig::default()).map_err(to_py)?;
        Ok(Self {
            model: trained.model,
            losses: trained.losses,
        })
    }

    #[pyo3(signature = (n, steps=50, seed=0))]
    fn sample(&self, n: usize, steps: usize, seed: u64) -> PyResult<Vec<(f64, f64)>> {
        let flat = euler_sample(&self.model, 2 * n, steps, seed).map_err(to_py)?;
        Ok(flat.chunks(2).map(|p| (p[0], p[1])).collect())
    }
}

/// Ground-truth synthetic scene.
#[pyclass(name = "SyntheticScene", frozen)]
struct PySyntheticScene(SyntheticScene);

#[pymethods]
impl PySyntheticScene {
    #[new]
    #[pyo3(signature = (seed=7, config=None))]
    fn new(seed: u64, config: Option<&str>) -> PyResult<Self> {
        let cfg = self::config(config)?;
        SyntheticScene::new(cfg.scene, seed).map(Self).map_err(to_py)
    }

    /// Render at 1-based timestamp `t`; returns `(width, height, rgb)`.
    fn render(&self, camera: &PyCamera, t: usize) -> PyResult<(usize, usize, Vec<f64>)> {
        let img = self.0.render(&camera.0, t).map_err(to_py)?.image();
        Ok((img.width, img.height, img.data))
    }

    /// Write the multi-view bundle (frames, depths, cameras) to `out`.
    #[pyo3(signature = (out, seed=7))]
    fn save_bundle(&self, out: PathBuf, seed: u64) -> PyResult<Vec<PyCamera>> {
        let bundle: SceneBundle = self.0.bundle(seed, "").map_err(to_py)?;
        bundle.save(&out).map_err(to_py)?;
        Ok(bundle.cams.into_iter().map(PyCamera).collect())
    }
}

/// Fitted 4D Gaussian scene.
#[pyclass(name = "GaussianScene", frozen)]
struct PyGaussianScene(SceneState);

#[pymethods]
impl PyGaussianScene {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        SceneState::load(&path).map(Self).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn n_frames(&self) -> usize {
        self.0.n_frames()
    }

    fn render(&self, camera: &PyCamera, t: usize) -> PyResult<(usize, usize, Vec<f64>)> {
        let img = render_scene(&self.0, &camera.0, t, &RasterConfig::default()).map_err(to_py)?.image();
        Ok((img.width, img.height, img.data))
    }
}

/// PSNR in dB between two interleaved RGB buffers; `inf` when identical.
#[pyfunction]
fn psnr(width: usize, height: usize, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    psnr_db(&image(width, height, a)?, &image(width, height, b)?).map_err(to_py)
}

#[pyfunction]
fn ssim(width: usize, height: usize, a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    ssim_index(&image(width, height, a)?, &image(width, height, b)?).map_err(to_py)
}

/// Run the benchmark and return the metric report as CSV.
#[pyfunction(name = "bench")]
#[pyo3(signature = (seed=7, config=None, out=None))]
fn run_bench(py: Python<'_>, seed: u64, config: Option<&str>, out: Option<PathBuf>) -> PyResult<String> {
    let cfg = self::config(config)?;
    let report = py.detach(|| run_benchmark(seed, &cfg, out.as_deref())).map_err(to_py)?;
    Ok(report.report.to_csv())
}

#[pymodule]
fn fourd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMask>()?;
    m.add_class::<PyCamera>()?;
    m.add_class::<PyToyFlow>()?;
    m.add_class::<PySyntheticScene>()?;
    m.add_class::<PyGaussianScene>()?;
    m.add_function(wrap_pyfunction!(load_cameras, m)?)?;
    m.add_function(wrap_pyfunction!(save_cameras, m)?)?;
    m.add_function(wrap_pyfunction!(trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    Ok(())
}
