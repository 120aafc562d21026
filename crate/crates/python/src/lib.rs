//! Python bindings. Build with `cargo build -p pamcurate-py --release
//! --features extension-module` and import the resulting library as
//! `pamcurate`.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pamcurate::assemble::EmaConfig;
use pamcurate::geo::GeoFence;
use pamcurate::hkmeans::{self, ClusterHierarchy, FitConfig, Points};
use pamcurate::{EmbeddingShard, GeoPoint, WindowId};

fn to_py(e: pamcurate::Error) -> PyErr {
    match e {
        pamcurate::Error::Io { .. } | pamcurate::Error::RawIo(_) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn points(rows: Vec<Vec<f32>>) -> PyResult<Points> {
    Points::from_rows(&rows).map_err(to_py)
}

#[pyfunction]
fn window_count(duration_s: i64) -> PyResult<u64> {
    pamcurate::model::window_count(duration_s).map_err(to_py)
}

#[pyfunction]
fn window_id(hydrophone_id: &str, recording_id: &str, offset_s: u64) -> PyResult<u64> {
    pamcurate::model::window_id_of(hydrophone_id, recording_id, offset_s)
        .map(|w| w.0)
        .map_err(to_py)
}

#[pyfunction]
fn sampling_probability(count: u64, t: u32) -> f64 {
    pamcurate::ais::sampling_probability(count, t)
}

/// Knee of a descending occurrence curve as `(rank, count)`.
#[pyfunction]
#[pyo3(signature = (curve, sensitivity = pamcurate::ais::KNEEDLE_SENSITIVITY))]
fn kneedle(curve: Vec<u64>, sensitivity: f64) -> PyResult<(usize, u64)> {
    let k = pamcurate::ais::kneedle_descending(&curve, sensitivity).map_err(to_py)?;
    Ok((k.rank, k.count))
}

#[pyfunction]
#[pyo3(signature = (step, tau0 = 0.999, tau_end = 0.9999, ramp_updates = 20))]
fn tau_at(step: u64, tau0: f64, tau_end: f64, ramp_updates: u64) -> PyResult<f64> {
    let c = EmaConfig::new(tau0, tau_end, ramp_updates).map_err(to_py)?;
    Ok(pamcurate::assemble::tau_at(step, &c))
}

/// Returns the updated teacher; the input list is left alone.
#[pyfunction]
fn ema_update(teacher: Vec<f64>, student: Vec<f64>, tau: f64) -> PyResult<Vec<f64>> {
    let mut t = teacher;
    pamcurate::assemble::ema_update(&mut t, &student, tau).map_err(to_py)?;
    Ok(t)
}

#[pyclass(name = "GeoFence", frozen)]
struct PyGeoFence {
    inner: GeoFence,
}

#[pymethods]
impl PyGeoFence {
    #[new]
    #[pyo3(signature = (lat, lon, side_km = pamcurate::geo::DEFAULT_SIDE_KM))]
    fn new(lat: f64, lon: f64, side_km: f64) -> PyResult<Self> {
        let center = GeoPoint::new(lat, lon).map_err(to_py)?;
        let inner = pamcurate::geo::fence_around(center, side_km).map_err(to_py)?;
        Ok(PyGeoFence { inner })
    }

    fn contains(&self, lat: f64, lon: f64) -> PyResult<bool> {
        Ok(self.inner.contains(&GeoPoint::new(lat, lon).map_err(to_py)?))
    }

    #[getter]
    fn lat_span(&self) -> f64 {
        self.inner.lat_span()
    }

    #[getter]
    fn lon_span(&self) -> f64 {
        self.inner.lon_span()
    }
}

/// `(ids, vectors)` from a shard file.
#[pyfunction]
fn read_shard(path: &str) -> PyResult<(Vec<u64>, Vec<Vec<f32>>)> {
    let s = pamcurate::shard::read_shard(path).map_err(to_py)?;
    Ok(s.records().map(|(id, v)| (id.0, v.to_vec())).unzip())
}

#[pyfunction]
fn write_shard(path: &str, ids: Vec<u64>, vectors: Vec<Vec<f32>>) -> PyResult<()> {
    if ids.len() != vectors.len() {
        return Err(PyValueError::new_err("ids and vectors differ in length"));
    }
    let dim = vectors.first().map_or(1, Vec::len);
    let shard = EmbeddingShard::from_records(dim, ids.into_iter().map(WindowId).zip(vectors)).map_err(to_py)?;
    pamcurate::shard::write_shard(&shard, path).map_err(to_py)
}

/// Manifest lines as dictionaries.
#[pyfunction]
fn read_manifest<'py>(py: Python<'py>, path: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let m = pamcurate::manifest::read_manifest(path).map_err(to_py)?;
    m.entries()
        .iter()
        .map(|e| {
            let d = PyDict::new(py);
            d.set_item("window_id", e.window_id.0)?;
            d.set_item("hydrophone_id", &e.hydrophone_id)?;
            d.set_item("recording_id", &e.recording_id)?;
            d.set_item("offset_s", e.offset_s)?;
            d.set_item("source", e.source.to_string())?;
            d.set_item("mmsi", e.mmsi.map(|m| m.0))?;
            d.set_item("cluster_path", e.cluster_path.as_ref().map(|p| p.0.clone()))?;
            Ok(d)
        })
        .collect()
}

/// Mini-batch k-means on raw rows; returns `k` centroids.
#[pyfunction]
#[pyo3(signature = (rows, k, seed, batch_size = FitConfig::DEFAULT_BATCH, passes = FitConfig::DEFAULT_PASSES))]
fn minibatch_fit(rows: Vec<Vec<f32>>, k: usize, seed: u64, batch_size: usize, passes: usize) -> PyResult<Vec<Vec<f32>>> {
    let pts = points(rows)?;
    let mut cfg = FitConfig::new(vec![k], seed);
    cfg.batch_size = batch_size;
    cfg.passes = passes;
    let set = hkmeans::minibatch_fit(&pts, k, &cfg).map_err(to_py)?;
    Ok((0..set.k()).map(|c| set.centroid(c).to_vec()).collect())
}

#[pyclass(name = "Hierarchy", frozen)]
struct PyHierarchy {
    inner: ClusterHierarchy,
}

#[pymethods]
impl PyHierarchy {
    #[staticmethod]
    #[pyo3(signature = (rows, levels, seed, batch_size = FitConfig::DEFAULT_BATCH, resample_rounds = FitConfig::DEFAULT_RESAMPLE_ROUNDS))]
    fn fit(rows: Vec<Vec<f32>>, levels: Vec<usize>, seed: u64, batch_size: usize, resample_rounds: usize) -> PyResult<Self> {
        let pts = points(rows)?;
        let mut cfg = FitConfig::new(levels, seed);
        cfg.batch_size = batch_size;
        cfg.resample_rounds = resample_rounds;
        let inner = hkmeans::build_hierarchy(&pts, &cfg).map_err(to_py)?;
        Ok(PyHierarchy { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyHierarchy { inner: hkmeans::read_model(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        hkmeans::write_model(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn leaf_count(&self) -> usize {
        self.inner.leaf_count()
    }

    /// Cluster sizes per level, finest level first.
    fn counts(&self) -> Vec<Vec<u64>> {
        self.inner.levels().iter().map(|l| l.counts().to_vec()).collect()
    }

    /// Root-to-leaf path and distance to the leaf centroid.
    fn assign(&self, vector: Vec<f32>) -> PyResult<(Vec<u32>, f64)> {
        let (path, d) = hkmeans::assign_path(&vector, &self.inner).map_err(to_py)?;
        Ok((path.0, d))
    }

    /// Leaf quotas for selecting `n` windows given leaf populations.
    fn quotas(&self, leaf_populations: Vec<u64>, n: u64) -> PyResult<BTreeMap<usize, u64>> {
        let q = pamcurate::hsample::allocate_quotas(&self.inner, &leaf_populations, n).map_err(to_py)?;
        Ok(q.leaf_quotas().iter().copied().enumerate().collect())
    }
}

#[pymodule]
#[pyo3(name = "pamcurate")]
fn pamcurate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(window_count, m)?)?;
    m.add_function(wrap_pyfunction!(window_id, m)?)?;
    m.add_function(wrap_pyfunction!(sampling_probability, m)?)?;
    m.add_function(wrap_pyfunction!(kneedle, m)?)?;
    m.add_function(wrap_pyfunction!(tau_at, m)?)?;
    m.add_function(wrap_pyfunction!(ema_update, m)?)?;
    m.add_function(wrap_pyfunction!(read_shard, m)?)?;
    m.add_function(wrap_pyfunction!(write_shard, m)?)?;
    m.add_function(wrap_pyfunction!(read_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(minibatch_fit, m)?)?;
    m.add_class::<PyGeoFence>()?;
    m.add_class::<PyHierarchy>()?;
    Ok(())
}
