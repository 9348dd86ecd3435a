use ndarray::{Array2, ArrayD};
use serde::{Deserialize, Serialize};

use super::model::{as_rows, TrainableModel};
use crate::dataset::Modality;
use crate::error::{CmktError, Result};

/// Encoder outputs for one modality, one row per sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedBatch {
    pub vectors: Array2<f64>,
    pub labels: Vec<u8>,
    pub modality: Modality,
}

impl EncodedBatch {
    pub fn new(vectors: Array2<f64>, labels: Vec<u8>, modality: Modality) -> Result<Self> {
        if vectors.nrows() != labels.len() {
            return Err(CmktError::shape(
                format!("{} labels", vectors.nrows()),
                format!("{} labels", labels.len()),
            ));
        }
        Ok(EncodedBatch { vectors, labels, modality })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Rows whose label equals `label`.
    pub fn class_rows(&self, label: u8) -> Array2<f64> {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == label).collect();
        self.vectors.select(ndarray::Axis(0), &idx)
    }
}

/// Runs the encoder in eval mode over `inputs` (`[N, C, H, W]`).
pub fn encode(encoder: &TrainableModel, inputs: &ArrayD<f64>, labels: &[u8], modality: Modality) -> Result<EncodedBatch> {
    let y = encoder.infer(inputs)?;
    EncodedBatch::new(as_rows(y), labels.to_vec(), modality)
}
