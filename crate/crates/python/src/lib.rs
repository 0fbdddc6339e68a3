//! Python bindings: phantoms, centerline tracing, the contour model and the
//! metrics, plus the file-based pipeline stages.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use polarring::centerline::{self, ProximityParams};
use polarring::contour::{rasterize, Polygon, SliceGrid};
use polarring::phantom::{self, PhantomConfig, PhantomTruth};
use polarring::pipeline::{self, PipelineConfig};
use polarring::segmenter::{self, Dataset, ModelConfig, TrainingCase};
use polarring::{metrics, selftest, Error, WorldPoint};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

type Vertices = Vec<(f64, f64)>;

fn vertices(p: &Polygon) -> Vertices {
    p.vertices.iter().map(|v| (v[0], v[1])).collect()
}

fn polygon(v: &[(f64, f64)]) -> Polygon {
    Polygon::new(v.iter().map(|&(x, y)| [x, y]).collect())
}

/// A 3-D scalar volume, x fastest.
#[pyclass(name = "Volume", module = "polarring", skip_from_py_object)]
#[derive(Clone)]
pub struct PyVolume {
    inner: polarring::Volume,
}

#[pymethods]
impl PyVolume {
    #[new]
    fn new(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        data: Vec<f64>,
    ) -> PyResult<Self> {
        let inner = polarring::Volume::new(dims, spacing, origin, data).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        let inner = polarring::io::read_volume(&path).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        polarring::io::write_volume(&path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn dims(&self) -> [usize; 3] {
        self.inner.dims()
    }

    #[getter]
    fn spacing(&self) -> [f64; 3] {
        self.inner.spacing()
    }

    #[getter]
    fn origin(&self) -> [f64; 3] {
        self.inner.origin()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn get(&self, i: usize, j: usize, k: usize) -> PyResult<f64> {
        let [m, n, q] = self.inner.dims();
        if i >= m || j >= n || k >= q {
            return Err(PyValueError::new_err("voxel index out of range"));
        }
        Ok(self.inner.get(i, j, k))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Volume(dims={:?}, spacing={:?})",
            self.inner.dims(),
            self.inner.spacing()
        )
    }
}

/// A phantom volume with its analytic ground truth.
#[pyclass(name = "Phantom", module = "polarring")]
pub struct PyPhantom {
    volume: polarring::Volume,
    truth: PhantomTruth,
}

#[pymethods]
impl PyPhantom {
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let (volume, truth) = pipeline::load_phantom(&dir).map_err(py_err)?;
        Ok(Self { volume, truth })
    }

    #[getter]
    fn volume(&self) -> PyVolume {
        PyVolume {
            inner: self.volume.clone(),
        }
    }

    #[getter]
    fn n_vessels(&self) -> usize {
        self.truth.vessels.len()
    }

    /// Proximity channel (0 internal, 1 external) carried by vessel `v`.
    fn channel(&self, v: usize) -> PyResult<usize> {
        self.truth
            .vessels
            .get(v)
            .map(|t| t.class().channel())
            .ok_or_else(|| PyValueError::new_err("no such vessel"))
    }

    fn truth_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.truth).map_err(json_err)
    }

    /// Truth (lumen, outer) polygons of vessel `v` on slice `k`, or None.
    fn polygons(&self, v: usize, k: usize) -> Option<(Vertices, Vertices)> {
        self.truth
            .polygons(v, k)
            .map(|(l, o)| (vertices(&l), vertices(&o)))
    }

    fn center(&self, v: usize, k: usize) -> Option<(f64, f64, f64)> {
        self.truth.center(v, k).map(|c| (c.x, c.y, c.z))
    }

    /// Exact proximity maps, one volume per channel.
    #[pyo3(signature = (a = 6.0, d_max_mm = 5.0))]
    fn proximity(&self, a: f64, d_max_mm: f64) -> PyResult<Vec<PyVolume>> {
        let map =
            centerline::proximity_map(&self.truth, &self.volume, ProximityParams { a, d_max_mm })
                .map_err(py_err)?;
        Ok(map
            .channels
            .into_iter()
            .map(|inner| PyVolume { inner })
            .collect())
    }
}

/// Generates a phantom. `config_json` overrides the default configuration.
#[pyfunction]
#[pyo3(signature = (seed, config_json = None))]
fn generate_phantom(seed: u64, config_json: Option<&str>) -> PyResult<PyPhantom> {
    let cfg: PhantomConfig = match config_json {
        Some(s) => serde_json::from_str(s).map_err(json_err)?,
        None => PhantomConfig::default(),
    };
    let cfg = PhantomConfig { seed, ..cfg };
    let (volume, truth) = phantom::generate_phantom(&cfg).map_err(py_err)?;
    Ok(PyPhantom { volume, truth })
}

#[pyfunction]
#[pyo3(signature = (d, a = 6.0, d_max_mm = 5.0))]
fn proximity_value(d: f64, a: f64, d_max_mm: f64) -> f64 {
    centerline::proximity_value(d, &ProximityParams { a, d_max_mm })
}

/// A traced centerline: voxel indices, world points (mm) and path cost.
#[pyclass(name = "Centerline", module = "polarring")]
pub struct PyCenterline {
    inner: centerline::CenterlinePath,
}

#[pymethods]
impl PyCenterline {
    #[getter]
    fn channel(&self) -> usize {
        self.inner.channel
    }

    #[getter]
    fn voxels(&self) -> Vec<[usize; 3]> {
        self.inner.voxels.clone()
    }

    #[getter]
    fn world(&self) -> Vec<[f64; 3]> {
        self.inner.world.iter().map(|p| p.to_array()).collect()
    }

    #[getter]
    fn cost(&self) -> f64 {
        self.inner.cost
    }

    fn is_connected(&self) -> bool {
        self.inner.is_connected()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

#[pyfunction]
#[pyo3(signature = (map, start, end, channel = 0))]
fn trace_centerline(
    map: &PyVolume,
    start: [usize; 3],
    end: [usize; 3],
    channel: usize,
) -> PyResult<PyCenterline> {
    let inner = centerline::trace_centerline(&map.inner, channel, start, end).map_err(py_err)?;
    Ok(PyCenterline { inner })
}

#[pyfunction]
#[pyo3(signature = (map, channel = 0, stride = 50))]
fn trace_with_waypoints(map: &PyVolume, channel: usize, stride: usize) -> PyResult<PyCenterline> {
    let inner = centerline::trace_with_waypoints(&map.inner, channel, stride).map_err(py_err)?;
    Ok(PyCenterline { inner })
}

/// The contour regression network.
#[pyclass(name = "Model", module = "polarring")]
pub struct PyModel {
    inner: segmenter::Model,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (seed = 0, config_json = None))]
    fn new(seed: u64, config_json: Option<&str>) -> PyResult<Self> {
        let cfg: ModelConfig = match config_json {
            Some(s) => serde_json::from_str(s).map_err(json_err)?,
            None => ModelConfig::default(),
        };
        let inner = segmenter::build_model(&cfg, seed).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let (inner, _) = segmenter::load_checkpoint(&dir).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        segmenter::save_checkpoint(&dir, &self.inner, None).map_err(py_err)
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.config).map_err(json_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.net.param_count()
    }

    /// Trains in place; returns the per-epoch training loss.
    #[pyo3(signature = (phantoms, slice_stride = 1))]
    fn train(
        &mut self,
        phantoms: Vec<PyRef<'_, PyPhantom>>,
        slice_stride: usize,
    ) -> PyResult<Vec<f64>> {
        let cases = phantoms
            .iter()
            .map(|p| TrainingCase::new(&p.volume, p.truth.clone()))
            .collect();
        let data = Dataset::new(cases, slice_stride);
        let rec = segmenter::train(&mut self.inner, &data, None).map_err(py_err)?;
        Ok(rec.epochs.iter().map(|e| e.loss).collect())
    }

    /// (lumen radii, outer radii) in mm on `slice` around the in-plane
    /// `center`. The volume is intensity-normalized first.
    fn predict(
        &self,
        volume: &PyVolume,
        center: (f64, f64),
        slice: usize,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let norm = volume.inner.normalize_intensity();
        let c = WorldPoint::new(center.0, center.1, 0.0);
        let cp = segmenter::predict(&self.inner, &norm.volume, c, slice).map_err(py_err)?;
        let outer = cp.outer_radii();
        Ok((cp.lumen_radii, outer))
    }
}

#[pyfunction]
fn hausdorff(a: Vertices, b: Vertices) -> PyResult<f64> {
    metrics::hausdorff(&polygon(&a), &polygon(&b)).map_err(py_err)
}

/// Dice of two polygons rasterized on the axial grid of `volume`.
#[pyfunction]
#[pyo3(signature = (a, b, volume, supersample = 4))]
fn dice(a: Vertices, b: Vertices, volume: &PyVolume, supersample: usize) -> PyResult<f64> {
    let grid = SliceGrid::of_volume(&volume.inner);
    let ma = rasterize(&polygon(&a), grid, supersample).binarize();
    let mb = rasterize(&polygon(&b), grid, supersample).binarize();
    metrics::dice(&ma, &mb).map_err(py_err)
}

/// Built-in checks as (name, passed, detail) tuples.
#[pyfunction]
fn run_selftest() -> Vec<(String, bool, String)> {
    selftest::run_all()
        .into_iter()
        .map(|c| (c.name.to_string(), c.passed, c.detail))
        .collect()
}

/// Runs the full pipeline; returns the summary as JSON.
#[pyfunction]
#[pyo3(signature = (out_dir, config_path = None, seed = None))]
fn run_e2e(out_dir: PathBuf, config_path: Option<PathBuf>, seed: Option<u64>) -> PyResult<String> {
    let mut cfg = match config_path.as_deref() {
        Some(p) => PipelineConfig::load(Path::new(p)).map_err(py_err)?,
        None => PipelineConfig::default(),
    };
    cfg.out_dir = out_dir;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let report = pipeline::run_e2e(&cfg).map_err(py_err)?;
    serde_json::to_string(&report.summary).map_err(json_err)
}

#[pymodule]
#[pyo3(name = "polarring")]
fn polarring_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyVolume>()?;
    m.add_class::<PyPhantom>()?;
    m.add_class::<PyCenterline>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(proximity_value, m)?)?;
    m.add_function(wrap_pyfunction!(trace_centerline, m)?)?;
    m.add_function(wrap_pyfunction!(trace_with_waypoints, m)?)?;
    m.add_function(wrap_pyfunction!(hausdorff, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(run_selftest, m)?)?;
    m.add_function(wrap_pyfunction!(run_e2e, m)?)?;
    Ok(())
}
