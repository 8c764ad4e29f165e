//! Python bindings: geometry, crop sampling, consensus, metrics and the
//! synthetic benchmark.

use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use homoguard::consensus::{
    self, Aggregation, ConsensusConfig, Merge, UeMethod, UncertaintyEstimate,
};
use homoguard::estimator::{compute_croptta_loss, EstimateTrajectory};
use homoguard::geometry::{self, CornerSet, Displacement, Point2};
use homoguard::harness::{
    run_evaluation, DatasetConfig, EstimatorSelector, EvalConfig, SampleProvider, SyntheticProvider,
};
use homoguard::metrics::{self, Category, EvalRecord};
use homoguard::sampler::{self, CropSpec, SamplingMethod, SamplingPlan};

type Mat24 = [[f64; 4]; 2];

fn err(e: homoguard::Error) -> PyErr {
    if e.is_estimator_error() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn parse<T: std::str::FromStr<Err = homoguard::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn corners(pts: [(f64, f64); 4]) -> CornerSet {
    CornerSet(pts.map(|(x, y)| Point2::new(x, y)))
}

/// Image sizes and ground resolution.
#[pyclass(name = "FrameConfig", from_py_object)]
#[derive(Clone, Copy)]
struct PyFrameConfig {
    inner: geometry::FrameConfig,
}

#[pymethods]
impl PyFrameConfig {
    #[new]
    #[pyo3(signature = (w_s=1536, w_t=512, w_r=256, meters_per_pixel=1.0))]
    fn new(w_s: usize, w_t: usize, w_r: usize, meters_per_pixel: f64) -> PyResult<Self> {
        let inner = geometry::FrameConfig {
            w_s,
            w_t,
            w_r,
            meters_per_pixel,
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn w_s(&self) -> usize {
        self.inner.w_s
    }
    #[getter]
    fn w_t(&self) -> usize {
        self.inner.w_t
    }
    #[getter]
    fn w_r(&self) -> usize {
        self.inner.w_r
    }
    #[getter]
    fn meters_per_pixel(&self) -> f64 {
        self.inner.meters_per_pixel
    }

    fn meters_per_resized_pixel(&self) -> f64 {
        self.inner.meters_per_resized_pixel()
    }

    fn __repr__(&self) -> String {
        let f = &self.inner;
        format!(
            "FrameConfig(w_s={}, w_t={}, w_r={}, meters_per_pixel={})",
            f.w_s, f.w_t, f.w_r, f.meters_per_pixel
        )
    }
}

fn frames_or_default(frames: Option<PyFrameConfig>) -> geometry::FrameConfig {
    frames.map(|f| f.inner).unwrap_or_default()
}

/// 3x3 homography taking each `src` corner to the matching `dst` corner.
#[pyfunction]
fn dlt(src: [(f64, f64); 4], dst: [(f64, f64); 4]) -> PyResult<[[f64; 3]; 3]> {
    Ok(geometry::dlt(&corners(src), &corners(dst))
        .map_err(err)?
        .rows())
}

/// Full thermal-view displacement implied by an estimate on a crop view.
#[pyfunction]
#[pyo3(signature = (d_crop, origin, size, frames=None))]
fn recover_full_displacement(
    d_crop: Mat24,
    origin: (f64, f64),
    size: usize,
    frames: Option<PyFrameConfig>,
) -> PyResult<Mat24> {
    let crop = CropSpec::new(Point2::new(origin.0, origin.1), size);
    let d = geometry::recover_full_displacement(
        &Displacement(d_crop),
        &crop,
        &frames_or_default(frames),
    )
    .map_err(err)?;
    Ok(d.0)
}

/// Crop views `(x, y, size)`; the first is always the full image.
#[pyfunction]
#[pyo3(signature = (method="random", o_c=32, n_c=5, seed=0, w_t=512))]
fn generate_crops(
    method: &str,
    o_c: usize,
    n_c: usize,
    seed: u64,
    w_t: usize,
) -> PyResult<Vec<(f64, f64, usize)>> {
    let plan = SamplingPlan {
        method: parse::<SamplingMethod>(method)?,
        o_c,
        n_c,
        seed,
    };
    Ok(sampler::generate_crops(&plan, w_t)
        .map_err(err)?
        .into_iter()
        .map(|c| (c.origin.x, c.origin.y, c.size))
        .collect())
}

fn to_displacements(ds: Vec<Mat24>) -> Vec<Displacement> {
    ds.into_iter().map(Displacement).collect()
}

#[pyfunction]
fn croptta_uncertainty(displacements: Vec<Mat24>) -> PyResult<Mat24> {
    Ok(
        consensus::croptta_uncertainty(&to_displacements(displacements))
            .map_err(err)?
            .stds,
    )
}

#[pyfunction]
fn ensemble_uncertainty(displacements: Vec<Mat24>) -> PyResult<Mat24> {
    Ok(
        consensus::ensemble_uncertainty(&to_displacements(displacements))
            .map_err(err)?
            .stds,
    )
}

fn uncertainty(u: Mat24) -> PyResult<UncertaintyEstimate> {
    UncertaintyEstimate::new(u).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (u_tta, u_de, merge="max"))]
fn merge_uncertainty(u_tta: Mat24, u_de: Mat24, merge: &str) -> PyResult<Mat24> {
    Ok(consensus::merge_uncertainty(
        &uncertainty(u_tta)?,
        &uncertainty(u_de)?,
        parse::<Merge>(merge)?,
    )
    .stds)
}

#[pyfunction]
fn uncertainty_score(u: Mat24) -> PyResult<f64> {
    Ok(consensus::uncertainty_score(&uncertainty(u)?))
}

#[pyfunction]
fn should_reject(u: Mat24, s_c: f64) -> PyResult<bool> {
    Ok(consensus::should_reject(&uncertainty(u)?, s_c))
}

#[pyfunction]
#[pyo3(signature = (displacements, policy="original"))]
fn aggregate_displacement(displacements: Vec<Mat24>, policy: &str) -> PyResult<Mat24> {
    let d = consensus::aggregate_displacement(
        &to_displacements(displacements),
        parse::<Aggregation>(policy)?,
    )
    .map_err(err)?;
    Ok(d.0)
}

/// Mean corner error in meters for resized-frame displacements.
#[pyfunction]
#[pyo3(signature = (pred, gt, frames=None))]
fn mace(pred: Mat24, gt: Mat24, frames: Option<PyFrameConfig>) -> f64 {
    metrics::mace(
        &Displacement(pred),
        &Displacement(gt),
        &frames_or_default(frames),
    )
}

#[pyfunction]
#[pyo3(signature = (pred, gt, frames=None))]
fn center_error(pred: Mat24, gt: Mat24, frames: Option<PyFrameConfig>) -> f64 {
    metrics::center_error(
        &Displacement(pred),
        &Displacement(gt),
        &frames_or_default(frames),
    )
}

/// ROC of `scores` as a detector of `mace_m > error_threshold_m`.
#[pyfunction]
#[pyo3(signature = (scores, mace_m, error_threshold_m=25.0))]
fn roc_curve<'py>(
    py: Python<'py>,
    scores: Vec<f64>,
    mace_m: Vec<f64>,
    error_threshold_m: f64,
) -> PyResult<Bound<'py, PyDict>> {
    if scores.len() != mace_m.len() {
        return Err(PyValueError::new_err("scores and mace_m differ in length"));
    }
    let records: Vec<EvalRecord> = scores
        .iter()
        .zip(&mace_m)
        .enumerate()
        .map(|(i, (&score, &m))| EvalRecord {
            sample_id: i.to_string(),
            mace_m: m,
            ce_m: m,
            score,
            rejected: false,
            category: Category::Clean,
        })
        .collect();
    let curve = metrics::roc_curve(&records, error_threshold_m).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("auc", curve.auc)?;
    out.set_item(
        "threshold",
        curve.points.iter().map(|p| p.threshold).collect::<Vec<_>>(),
    )?;
    out.set_item(
        "tpr",
        curve.points.iter().map(|p| p.tpr).collect::<Vec<_>>(),
    )?;
    out.set_item(
        "fpr",
        curve.points.iter().map(|p| p.fpr).collect::<Vec<_>>(),
    )?;
    out.set_item("positives", curve.positives)?;
    out.set_item("negatives", curve.negatives)?;
    Ok(out)
}

/// Decayed L1 loss over per-view trajectories (`trajectories[v][k]`).
#[pyfunction]
#[pyo3(signature = (trajectories, gt, gamma=0.85))]
fn croptta_loss(trajectories: Vec<Vec<Mat24>>, gt: Mat24, gamma: f64) -> PyResult<f64> {
    let ts = trajectories
        .into_iter()
        .map(|t| EstimateTrajectory::new(to_displacements(t)))
        .collect::<homoguard::Result<Vec<_>>>()
        .map_err(err)?;
    compute_croptta_loss(&ts, &Displacement(gt), gamma).map_err(err)
}

/// Procedurally generated benchmark held in memory.
#[pyclass(name = "SyntheticDataset")]
struct PyDataset {
    provider: SyntheticProvider,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (seed=0, count=100, d_c=vec![512.0], categories=None, clean_fraction=0.5, map_size=4096))]
    fn new(
        py: Python<'_>,
        seed: u64,
        count: usize,
        d_c: Vec<f64>,
        categories: Option<Vec<String>>,
        clean_fraction: f64,
        map_size: usize,
    ) -> PyResult<Self> {
        let categories = match categories {
            Some(cs) => cs
                .iter()
                .map(|c| parse::<Category>(c))
                .collect::<PyResult<_>>()?,
            None => Category::FAILURES.to_vec(),
        };
        let config = DatasetConfig {
            seed,
            count,
            d_c,
            categories,
            clean_fraction,
            map_size,
            ..DatasetConfig::default()
        };
        let provider = py.detach(|| SyntheticProvider::new(config)).map_err(err)?;
        Ok(Self { provider })
    }

    fn __len__(&self) -> usize {
        self.provider.entries().len()
    }

    /// Manifest entry of sample `index` as a dict.
    fn entry<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyDict>> {
        let e = self
            .provider
            .entries()
            .get(index)
            .ok_or_else(|| PyIndexError::new_err(format!("sample {index} out of range")))?;
        let out = PyDict::new(py);
        out.set_item("id", &e.id)?;
        out.set_item("category", e.category.as_str())?;
        out.set_item("gt", e.gt.0)?;
        out.set_item("d_c_m", e.d_c_m)?;
        out.set_item("magnitude", e.magnitude)?;
        Ok(out)
    }

    /// `(satellite, thermal)` as `(width, bytes)` pairs of 8-bit row-major
    /// pixels.
    #[allow(clippy::type_complexity)]
    fn render<'py>(
        &self,
        py: Python<'py>,
        index: usize,
    ) -> PyResult<((usize, Bound<'py, PyBytes>), (usize, Bound<'py, PyBytes>))> {
        if index >= self.provider.entries().len() {
            return Err(PyIndexError::new_err(format!(
                "sample {index} out of range"
            )));
        }
        let (s, t) = py.detach(|| self.provider.load(index)).map_err(err)?;
        Ok((
            (s.width(), PyBytes::new(py, s.pixels())),
            (t.width(), PyBytes::new(py, t.pixels())),
        ))
    }

    /// Run the estimator with consensus over every sample; returns one dict
    /// per evaluated sample.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (estimator="classical", method="croptta", n_c=5, o_c=32, sampling="random", s_c=None, early_stop_k=None, seed=0, threads=None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        estimator: &str,
        method: &str,
        n_c: usize,
        o_c: usize,
        sampling: &str,
        s_c: Option<f64>,
        early_stop_k: Option<usize>,
        seed: u64,
        threads: Option<usize>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let defaults = ConsensusConfig::default();
        let cfg = EvalConfig {
            estimator: parse::<EstimatorSelector>(estimator)?,
            consensus: ConsensusConfig {
                method: parse::<UeMethod>(method)?,
                n_c,
                s_c: s_c.unwrap_or(defaults.s_c),
                early_stop_k,
                ..defaults
            },
            plan: SamplingPlan {
                method: parse::<SamplingMethod>(sampling)?,
                o_c,
                n_c,
                seed: 0,
            },
            seed,
            threads,
            ..EvalConfig::default()
        };
        let out = py
            .detach(|| run_evaluation(&self.provider, &cfg))
            .map_err(err)?;
        out.outcomes
            .iter()
            .map(|o| {
                let d = PyDict::new(py);
                d.set_item("id", &o.record.sample_id)?;
                d.set_item("category", o.record.category.as_str())?;
                d.set_item("mace_m", o.record.mace_m)?;
                d.set_item("ce_m", o.record.ce_m)?;
                d.set_item("score", o.record.score)?;
                d.set_item("rejected", o.record.rejected)?;
                d.set_item("displacement", o.displacement.0)?;
                Ok(d)
            })
            .collect()
    }
}

#[pymodule]
fn homoguard_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFrameConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(dlt, m)?)?;
    m.add_function(wrap_pyfunction!(recover_full_displacement, m)?)?;
    m.add_function(wrap_pyfunction!(generate_crops, m)?)?;
    m.add_function(wrap_pyfunction!(croptta_uncertainty, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_uncertainty, m)?)?;
    m.add_function(wrap_pyfunction!(merge_uncertainty, m)?)?;
    m.add_function(wrap_pyfunction!(uncertainty_score, m)?)?;
    m.add_function(wrap_pyfunction!(should_reject, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_displacement, m)?)?;
    m.add_function(wrap_pyfunction!(mace, m)?)?;
    m.add_function(wrap_pyfunction!(center_error, m)?)?;
    m.add_function(wrap_pyfunction!(roc_curve, m)?)?;
    m.add_function(wrap_pyfunction!(croptta_loss, m)?)?;
    m.add(
        "DEFAULT_REJECTION_THRESHOLD",
        ConsensusConfig::default().s_c,
    )?;
    Ok(())
}
