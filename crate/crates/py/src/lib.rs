//! Python bindings: phantoms, HCR extraction, the VAE and the marker
//! classifier. Arrays cross the boundary as flat Python lists.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use radmi::classify::EnsembleModel;
use radmi::pipeline::PreprocessConfig;
use radmi::synth::{PhantomParams, PhantomStyle};
use radmi::vae::{Sample, VaeConfig};
use radmi::volume;
use radmi::workflow::{RunConfig, Workspace};

fn err(e: radmi::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Image plus organ mask on one grid. Voxels are x-fastest.
#[pyclass(name = "MaskedVolume", from_py_object)]
#[derive(Clone)]
struct PyMaskedVolume {
    inner: volume::MaskedVolume,
}

#[pymethods]
impl PyMaskedVolume {
    #[new]
    fn new(voxels: Vec<f32>, mask: Vec<u8>, dims: [usize; 3], spacing: [f64; 3]) -> PyResult<Self> {
        let v = volume::Volume::new(dims, spacing, voxels).map_err(err)?;
        let m = volume::Mask::new(dims, spacing, mask).map_err(err)?;
        let inner = volume::MaskedVolume::new(v, m).map_err(err)?;
        Ok(Self { inner })
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
    fn voxels(&self) -> Vec<f32> {
        self.inner.volume.voxels().to_vec()
    }

    #[getter]
    fn mask(&self) -> Vec<u8> {
        self.inner.mask.voxels().to_vec()
    }

    fn foreground_count(&self) -> usize {
        self.inner.mask.count()
    }

    /// The 32 hand-crafted features, in `HCR_NAMES` order.
    #[pyo3(signature = (bin_width = radmi::hcr::DEFAULT_BIN_WIDTH))]
    fn hcr(&self, bin_width: f64) -> PyResult<Vec<f64>> {
        radmi::hcr::extract_hcr(&self.inner, bin_width).map(|h| h.values).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("MaskedVolume(dims={:?}, foreground={})", self.inner.dims(), self.inner.mask.count())
    }
}

/// One synthetic phantom. `flags` are the shape, atrophy, fat and senility markers.
#[pyfunction]
#[pyo3(signature = (flags, seed, dims = [40, 28, 12], spacing = [2.0, 2.0, 2.0], hard_mode = false))]
fn phantom(flags: [bool; 4], seed: u64, dims: [usize; 3], spacing: [f64; 3], hard_mode: bool) -> PyResult<PyMaskedVolume> {
    let params = PhantomParams { dims, spacing, flags, seed };
    let style = PhantomStyle { hard_mode, ..Default::default() };
    let inner = radmi::synth::phantom(&params, &style).map_err(err)?;
    Ok(PyMaskedVolume { inner })
}

/// Resample, centre on the default grid and standardize intensities with
/// statistics from the whole list.
#[pyfunction]
fn preprocess(volumes: Vec<PyMaskedVolume>) -> PyResult<Vec<PyMaskedVolume>> {
    let vols: Vec<_> = volumes.into_iter().map(|v| v.inner).collect();
    let fit = vec![true; vols.len()];
    let (out, _) = radmi::pipeline::preprocess_cohort(&vols, &fit, &PreprocessConfig::default()).map_err(err)?;
    Ok(out.into_iter().map(|inner| PyMaskedVolume { inner }).collect())
}

#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    radmi::classify::auc(&scores, &labels).map_err(err)
}

/// Bootstrap AUC over resampled subjects, as `(mean, std)`.
#[pyfunction]
#[pyo3(signature = (scores, labels, n_boot = 10_000, seed = 0))]
fn bootstrap_auc(scores: Vec<f64>, labels: Vec<u8>, n_boot: usize, seed: u64) -> PyResult<(f64, f64)> {
    radmi::classify::bootstrap_auc(&scores, &labels, n_boot, seed).map_err(err)
}

/// Cross-validated ensemble of L2 logistic regressions.
#[pyclass(name = "Classifier")]
struct PyClassifier {
    inner: EnsembleModel,
}

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    #[pyo3(signature = (x, y, folds = 4, seed = 0, l2_c = 1.0))]
    fn fit(x: Vec<Vec<f64>>, y: Vec<u8>, folds: usize, seed: u64, l2_c: f64) -> PyResult<Self> {
        let inner = radmi::classify::cv_ensemble_fit(&x, &y, folds, seed, l2_c).map_err(err)?;
        Ok(Self { inner })
    }

    /// Mean positive-class probability over the fold models.
    fn predict(&self, x: Vec<Vec<f64>>) -> Vec<f64> {
        self.inner.predict(&x)
    }

    fn mean_abs_weights(&self) -> Vec<f64> {
        self.inner.mean_abs_weights()
    }
}

/// HCR-conditioned VAE on the default 24x16x8 grid.
#[pyclass(name = "VaeModel")]
struct PyVaeModel {
    inner: radmi::vae::VaeModel,
}

impl PyVaeModel {
    fn samples(&self, volumes: &[PyMaskedVolume]) -> PyResult<Vec<Sample>> {
        volumes
            .iter()
            .map(|v| Sample::from_masked(&v.inner, &self.inner.config).map_err(err))
            .collect()
    }
}

#[pymethods]
impl PyVaeModel {
    #[new]
    #[pyo3(signature = (kappa = 1.0, dlr_dim = 32, epochs = 200, seed = 0))]
    fn new(kappa: f64, dlr_dim: usize, epochs: usize, seed: u64) -> PyResult<Self> {
        let cfg = VaeConfig {
            kappa,
            dlr_dim,
            vae_epochs: epochs,
            seed,
            ..Default::default()
        };
        let inner = radmi::vae::VaeModel::new(cfg).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let inner = radmi::vae::VaeModel::load(&path).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    /// Trains on preprocessed volumes with their standardized HCR rows and
    /// returns the per-epoch `(nll, kl, mi, total)` trace.
    fn train(&mut self, volumes: Vec<PyMaskedVolume>, hcr: Vec<Vec<f64>>) -> PyResult<Vec<(f64, f64, f64, f64)>> {
        let samples = self.samples(&volumes)?;
        let report = self.inner.train(&samples, &hcr).map_err(err)?;
        Ok(report.trace.iter().map(|r| (r.nll, r.kl, r.mi, r.total)).collect())
    }

    /// Posterior means, one row per volume.
    fn extract_dlr(&self, volumes: Vec<PyMaskedVolume>) -> PyResult<Vec<Vec<f64>>> {
        let samples = self.samples(&volumes)?;
        self.inner.extract_dlr(&samples).map_err(err)
    }

    /// Mean and std over volumes of the in-mask mean squared error.
    fn reconstruction_error(&self, volumes: Vec<PyMaskedVolume>, hcr: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
        let samples = self.samples(&volumes)?;
        self.inner.reconstruction_error(&samples, &hcr).map_err(err)
    }

    #[getter]
    fn epochs_done(&self) -> usize {
        self.inner.state.epochs_done
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }
}

/// Runs every stage from cohort generation to the report into `out`.
#[pyfunction]
#[pyo3(signature = (out, config = None, seed = None))]
fn run_pipeline(py: Python<'_>, out: PathBuf, config: Option<PathBuf>, seed: Option<u64>) -> PyResult<()> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(&p).map_err(err)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    cfg.validate().map_err(err)?;
    py.detach(|| radmi::workflow::run_all(&Workspace::new(out), &cfg)).map_err(err)
}

#[pymodule]
fn radmi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMaskedVolume>()?;
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyVaeModel>()?;
    m.add_function(wrap_pyfunction!(phantom, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_auc, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add("HCR_NAMES", radmi::hcr::HCR_NAMES.to_vec())?;
    m.add("MARKERS", radmi::manifest::MARKERS.to_vec())?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
