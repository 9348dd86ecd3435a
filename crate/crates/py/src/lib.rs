//! Python module `cmkt_py`: datasets, training, prediction, metrics, MMD
//! and LIME audits over the `cmkt` core.

use std::path::PathBuf;

use cmkt::dataset::{
    generate_synthetic, load_cache, make_spectrogram, save_cache, split_dataset, split_sizes, synthetic_nozzle_mask, AudioSnippet,
    DatasetSplit, Modality, PairedSample, PreprocessParams, SyntheticConfig,
};
use cmkt::diagnostics::Kernel;
use cmkt::evaluation::{config_hash, evaluate_on, MetricsReport};
use cmkt::training::{train_method, Direction, Method, MethodPlan, Scale, SnapshotOptions, TrainOverrides, TrainedModel};
use cmkt::xai::{explain_samples, intersection_stats, read_mask, AuditConfig, ExplanationRecord};
use cmkt::CmktError;
use ndarray::{Array2, Axis};
use numpy::{IntoPyArray, PyArray1, PyArray2, PyArray3, PyReadonlyArray1, PyReadonlyArray2, PyReadonlyArray3};
use pyo3::exceptions::{PyFileNotFoundError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: CmktError) -> PyErr {
    match e {
        CmktError::MissingArtifact { .. } => PyFileNotFoundError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = CmktError>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn to_json<T: Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Converts any serializable value through `json.loads`.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (to_json(value)?,))
}

fn part<'a>(split: &'a DatasetSplit, name: &str) -> PyResult<&'a [PairedSample]> {
    split
        .parts()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| s)
        .ok_or_else(|| PyValueError::new_err(format!("unknown split `{name}` (train, validation, test)")))
}

/// Paired samples split into train, validation and test parts.
#[pyclass(module = "cmkt_py")]
struct Dataset {
    split: DatasetSplit,
    #[pyo3(get)]
    data_hash: String,
}

#[pymethods]
impl Dataset {
    #[staticmethod]
    #[pyo3(signature = (n_samples=2000, seed=0, nuisance=0.0, signal=1.0, visual_noise=0.0, audio_noise=0.0, class_ratio=0.25))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        n_samples: usize,
        seed: u64,
        nuisance: f64,
        signal: f64,
        visual_noise: f64,
        audio_noise: f64,
        class_ratio: f64,
    ) -> PyResult<Self> {
        let cfg = SyntheticConfig {
            n_samples,
            seed,
            shared_signal_strength: signal,
            visual_nuisance_strength: nuisance,
            visual_noise_std: visual_noise,
            audio_noise_std: audio_noise,
            class_ratio,
        };
        let samples = generate_synthetic(&cfg).map_err(err)?;
        let split = split_dataset(samples, (8, 1, 1), seed).map_err(err)?;
        Ok(Dataset { split, data_hash: config_hash(&cfg).map_err(err)? })
    }

    #[staticmethod]
    fn load_cache(path: PathBuf) -> PyResult<Self> {
        let (split, manifest) = load_cache(&path).map_err(err)?;
        Ok(Dataset { split, data_hash: manifest.data_hash() })
    }

    /// Writes the array cache and returns its data hash.
    #[pyo3(signature = (path, split_seed=0))]
    fn save_cache(&self, path: PathBuf, split_seed: u64) -> PyResult<String> {
        let params = PreprocessParams { split_seed, ..Default::default() };
        Ok(save_cache(&path, &self.split, &params).map_err(err)?.data_hash())
    }

    fn sizes(&self) -> (usize, usize, usize) {
        self.split.sizes()
    }

    /// `[N, 80, 80]` images of one modality.
    fn images<'py>(&self, py: Python<'py>, split: &str, modality: &str) -> PyResult<Bound<'py, PyArray3<f64>>> {
        let m: Modality = parse(modality)?;
        let samples = part(&self.split, split)?;
        let views: Vec<_> = samples.iter().map(|s| s.image(m).view()).collect();
        let stacked = ndarray::stack(Axis(0), &views).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(stacked.into_pyarray(py))
    }

    fn labels<'py>(&self, py: Python<'py>, split: &str) -> PyResult<Bound<'py, PyArray1<u8>>> {
        Ok(cmkt::dataset::labels(part(&self.split, split)?).into_pyarray(py))
    }

    fn indices<'py>(&self, py: Python<'py>, split: &str) -> PyResult<Bound<'py, PyArray1<usize>>> {
        Ok(part(&self.split, split)?.iter().map(|s| s.index).collect::<Vec<_>>().into_pyarray(py))
    }

    fn __len__(&self) -> usize {
        self.split.len()
    }

    fn __repr__(&self) -> String {
        let (a, b, c) = self.split.sizes();
        format!("Dataset(train={a}, validation={b}, test={c})")
    }
}

/// A trained model of any method.
#[pyclass(module = "cmkt_py")]
struct Model {
    inner: TrainedModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model { inner: TrainedModel::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(err)
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method().as_str()
    }

    #[getter]
    fn input_modalities(&self) -> Vec<&'static str> {
        self.inner.input_modalities().into_iter().map(Modality::as_str).collect()
    }

    /// Defect probabilities for one split.
    #[pyo3(signature = (dataset, split="test"))]
    fn predict<'py>(&self, py: Python<'py>, dataset: &Dataset, split: &str) -> PyResult<Bound<'py, PyArray1<f64>>> {
        Ok(self.inner.predict(part(&dataset.split, split)?).map_err(err)?.into_pyarray(py))
    }

    /// Defect probabilities for raw `[N, 80, 80]` images of one modality.
    fn predict_images<'py>(&self, py: Python<'py>, images: PyReadonlyArray3<'py, f64>, modality: &str) -> PyResult<Bound<'py, PyArray1<f64>>> {
        let m: Modality = parse(modality)?;
        let predict = self.inner.image_predictor(m).map_err(err)?;
        let x = images.as_array().insert_axis(Axis(1)).to_owned().into_dyn();
        Ok(predict(&x).map_err(err)?.into_pyarray(py))
    }

    #[pyo3(signature = (dataset, split="test"))]
    fn evaluate<'py>(&self, py: Python<'py>, dataset: &Dataset, split: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &evaluate_on(&self.inner, part(&dataset.split, split)?).map_err(err)?)
    }

    fn __repr__(&self) -> String {
        format!("Model(method={:?}, inputs={:?})", self.method(), self.input_modalities())
    }
}

/// Model plus training diagnostics.
#[pyclass(module = "cmkt_py")]
struct TrainResult {
    #[pyo3(get)]
    model: Py<Model>,
    #[pyo3(get)]
    training_runtime_s: f64,
    history_json: String,
    snapshots_json: String,
}

#[pymethods]
impl TrainResult {
    /// Per-phase, per-epoch statistics.
    #[getter]
    fn history<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        py.import("json")?.call_method1("loads", (&self.history_json,))
    }

    /// Encoded-space MMDs on the validation set (semantic alignment only).
    #[getter]
    fn snapshots<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        py.import("json")?.call_method1("loads", (&self.snapshots_json,))
    }
}

/// Trains `method` on the dataset's training split using the shipped
/// presets of `scale`; keyword arguments override the preset config.
#[pyfunction]
#[pyo3(signature = (dataset, method, direction="v2a", scale="compact", epochs=None, learning_rate=None, weight_decay=None, batch_size=None, seed=None, snapshot_every=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &Dataset,
    method: &str,
    direction: &str,
    scale: &str,
    epochs: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    snapshot_every: Option<usize>,
) -> PyResult<TrainResult> {
    let method: Method = parse(method)?;
    let direction: Direction = parse(direction)?;
    let scale = match scale {
        "compact" => Scale::Compact,
        "full" => Scale::Full,
        other => return Err(PyValueError::new_err(format!("unknown scale `{other}` (compact, full)"))),
    };
    let overrides = TrainOverrides { epochs, learning_rate, weight_decay, batch_size, seed, snapshot_every, ..Default::default() };
    let plan = MethodPlan::builtin(method, direction, scale, &overrides).map_err(err)?;
    let out = train_method(&plan, &dataset.split, &SnapshotOptions::default()).map_err(err)?;
    Ok(TrainResult {
        history_json: to_json(&out.histories)?,
        snapshots_json: to_json(&out.snapshots)?,
        training_runtime_s: out.training_runtime_s,
        model: Py::new(py, Model { inner: out.model })?,
    })
}

/// LIME explanations of the first `n` samples of a split. With a mask
/// (`"synthetic"` or a mask file path), also the per-sample number of
/// positive-mask pixels inside it.
#[pyfunction]
#[pyo3(signature = (model, dataset, split="test", n=10, modality=None, mask=None, perturbations=1000, grid=8, top_k=5, seed=0))]
#[allow(clippy::too_many_arguments)]
fn explain<'py>(
    py: Python<'py>,
    model: &Model,
    dataset: &Dataset,
    split: &str,
    n: usize,
    modality: Option<&str>,
    mask: Option<&str>,
    perturbations: usize,
    grid: usize,
    top_k: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let m = match modality {
        Some(s) => parse(s)?,
        None => match model.inner.input_modalities().as_slice() {
            [m] => *m,
            _ => return Err(PyValueError::new_err("model takes both modalities; pass modality=")),
        },
    };
    let samples = part(&dataset.split, split)?;
    let samples = &samples[..n.min(samples.len())];
    let mut cfg = AuditConfig { grid: (grid, grid), top_k, ..Default::default() };
    cfg.lime.n_perturb = perturbations;
    cfg.lime.seed = seed;
    let predict = model.inner.image_predictor(m).map_err(err)?;
    let explained = explain_samples(&predict, samples, m, &cfg).map_err(err)?;
    let records: Vec<ExplanationRecord> = explained.iter().map(ExplanationRecord::from).collect();
    let mask = match mask {
        None => None,
        Some("synthetic") => Some(synthetic_nozzle_mask()),
        Some(path) => Some(read_mask(std::path::Path::new(path)).map_err(err)?),
    };
    let stats = match &mask {
        Some(mask) => {
            let s = intersection_stats(&explained, mask).map_err(err)?;
            serde_json::json!({ "counts": s.counts, "mean": s.mean })
        }
        None => serde_json::Value::Null,
    };
    to_py(py, &serde_json::json!({ "modality": m, "records": records, "intersection": stats }))
}

/// Spectrogram image of one 1470-sample snippet at 44.1 kHz.
#[pyfunction]
fn spectrogram<'py>(py: Python<'py>, samples: PyReadonlyArray1<'py, f64>) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let snippet = AudioSnippet::new(samples.as_array().to_vec()).map_err(err)?;
    Ok(make_spectrogram(&snippet).pixels.into_pyarray(py))
}

/// MMD between two row samples; `kernel` is `linear` or `rbf` (median
/// bandwidth unless given).
#[pyfunction]
#[pyo3(signature = (x, y, kernel="rbf", bandwidth=None))]
fn mmd(x: PyReadonlyArray2<'_, f64>, y: PyReadonlyArray2<'_, f64>, kernel: &str, bandwidth: Option<f64>) -> PyResult<f64> {
    let k = match kernel {
        "linear" => Kernel::Linear,
        "rbf" => Kernel::Rbf { bandwidth },
        other => return Err(PyValueError::new_err(format!("unknown kernel `{other}` (linear, rbf)"))),
    };
    cmkt::diagnostics::mmd(x.as_array(), y.as_array(), k).map_err(err)
}

/// Confusion matrix, accuracy, balanced accuracy and AUC of scores.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, scores: Vec<f64>, labels: Vec<u8>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &MetricsReport::from_scores("scores", "", &scores, &labels).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (n, ratio=(8, 1, 1)))]
fn split_counts(n: usize, ratio: (u32, u32, u32)) -> PyResult<(usize, usize, usize)> {
    split_sizes(n, ratio).map_err(err)
}

/// Boolean `[80, 80]` nuisance-ring mask of the synthetic dataset.
#[pyfunction]
fn nuisance_mask(py: Python<'_>) -> Bound<'_, PyArray2<bool>> {
    let m: Array2<bool> = synthetic_nozzle_mask();
    m.into_pyarray(py)
}

#[pyfunction]
fn ccsa_loss(semantic_alignment: f64, separation: f64, classification: f64, tradeoff: f64) -> PyResult<f64> {
    cmkt::losses::ccsa_loss(semantic_alignment, separation, classification, tradeoff).map_err(err)
}

#[pymodule]
fn cmkt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_class::<TrainResult>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(explain, m)?)?;
    m.add_function(wrap_pyfunction!(spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(mmd, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(split_counts, m)?)?;
    m.add_function(wrap_pyfunction!(nuisance_mask, m)?)?;
    m.add_function(wrap_pyfunction!(ccsa_loss, m)?)?;
    m.add("METHODS", Method::ALL.iter().map(|m| m.as_str()).collect::<Vec<_>>())?;
    Ok(())
}
