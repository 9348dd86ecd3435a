use super::metrics::MetricsReport;
use super::runtime::measure_runtime;
use crate::dataset::{labels, DatasetSplit, PairedSample};
use crate::error::Result;
use crate::training::TrainedModel;

/// `visual`, `audio` or `visual+audio`.
pub fn modality_tag(model: &TrainedModel) -> String {
    model.input_modalities().iter().map(|m| m.as_str()).collect::<Vec<_>>().join("+")
}

/// Metrics of `model` on `samples`; no runtimes filled in.
pub fn evaluate_on(model: &TrainedModel, samples: &[PairedSample]) -> Result<MetricsReport> {
    let scores = model.predict(samples)?;
    MetricsReport::from_scores(model.method().as_str(), &modality_tag(model), &scores, &labels(samples))
}

/// Test-set metrics with the recorded training runtime and the prediction
/// runtime of one pass over the validation set.
pub fn evaluate_model(model: &TrainedModel, split: &DatasetSplit, training_runtime_s: f64) -> Result<MetricsReport> {
    let mut r = evaluate_on(model, &split.test)?;
    r.training_runtime_s = training_runtime_s;
    r.prediction_runtime_s = measure_runtime(model, &split.validation)?;
    Ok(r)
}
