//! Per-run report documents.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::MetricsReport;
use crate::error::{CmktError, Result};
use crate::training::{Direction, Method, MethodPlan};

/// Hex SHA-256 of the compact JSON form of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    pub config_hash: String,
    /// Hash of the dataset cache manifest, or of the synthetic config.
    pub data_hash: String,
    pub seed: u64,
    pub metrics: MetricsReport,
    #[serde(default)]
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn new(plan: &MethodPlan, data_hash: &str, metrics: MetricsReport) -> Result<Self> {
        let mut notes = Vec::new();
        if matches!(plan.method, Method::FslMapping | Method::SslMapping) && plan.direction == Direction::A2v {
            notes.push("audio-to-visual mapping: the audio representation carries less information than the visual one, so classification may be compromised".into());
        }
        if metrics.balanced_accuracy.is_none() {
            notes.push("balanced accuracy undefined: the test set lacks a class".into());
        }
        Ok(RunReport {
            method: plan.method,
            direction: plan.method.uses_direction().then_some(plan.direction),
            config_hash: config_hash(plan)?,
            data_hash: data_hash.into(),
            seed: plan.primary_cfg().seed,
            metrics,
            notes,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| CmktError::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CmktError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
