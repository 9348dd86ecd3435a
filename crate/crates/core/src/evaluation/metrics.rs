use serde::{Deserialize, Serialize};

use crate::error::{CmktError, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Binary confusion counts; the positive class is defective (label 1).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn new(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        ConfusionMatrix { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }
}

fn check_pairs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(CmktError::shape(format!("{} labels", scores.len()), format!("{} labels", labels.len())));
    }
    if scores.is_empty() {
        return Err(CmktError::Empty("no scores".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(CmktError::InvalidArgument(format!("label {l} outside {{0, 1}}")));
    }
    Ok(())
}

/// Predicts positive iff `score >= threshold`.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionMatrix> {
    check_pairs(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (false, false) => cm.tn += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    if cm.total() == 0 {
        return Err(CmktError::Undefined("accuracy of an empty confusion matrix".into()));
    }
    Ok((cm.tp + cm.tn) as f64 / cm.total() as f64)
}

/// Mean of true-positive and true-negative rates.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let pos = cm.tp + cm.fn_;
    let neg = cm.tn + cm.fp;
    if pos == 0 || neg == 0 {
        return Err(CmktError::Undefined("balanced accuracy needs both classes".into()));
    }
    Ok((cm.tp as f64 / pos as f64 + cm.tn as f64 / neg as f64) / 2.0)
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks in `O(n log n)`.
pub fn auc_roc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_pairs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CmktError::Undefined("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Evaluation of one model on one labeled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    /// Modality fed at prediction time (`visual`, `audio` or `visual+audio`).
    pub modality: String,
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    /// `None` when the evaluated set lacks a class.
    pub balanced_accuracy: Option<f64>,
    pub auc_roc: Option<f64>,
    pub training_runtime_s: f64,
    pub prediction_runtime_s: f64,
}

impl MetricsReport {
    pub fn from_scores(method: &str, modality: &str, scores: &[f64], labels: &[u8]) -> Result<Self> {
        let cm = confusion(scores, labels, DEFAULT_THRESHOLD)?;
        Ok(MetricsReport {
            method: method.into(),
            modality: modality.into(),
            confusion: cm,
            accuracy: accuracy(&cm)?,
            balanced_accuracy: balanced_accuracy(&cm).ok(),
            auc_roc: auc_roc(scores, labels).ok(),
            training_runtime_s: 0.0,
            prediction_runtime_s: 0.0,
        })
    }

    /// Stored accuracy and balanced accuracy agree with the confusion matrix.
    pub fn is_consistent(&self) -> bool {
        accuracy(&self.confusion).ok() == Some(self.accuracy)
            && balanced_accuracy(&self.confusion).ok() == self.balanced_accuracy
    }
}
