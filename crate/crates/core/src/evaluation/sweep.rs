//! Noise robustness: retrain every method at each corruption level of one
//! modality (the other stays clean) and record test accuracy.

use serde::{Deserialize, Serialize};

use super::evaluate::evaluate_on;
use crate::dataset::{corrupt_split, DatasetSplit, NoiseLevel};
use crate::error::{CmktError, Result};
use crate::training::{train_method, MethodPlan, SnapshotOptions, TrainOverrides};
use crate::util::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweepConfig {
    pub visual_sigmas: Vec<f64>,
    /// `inf` means clean.
    pub audio_snrs: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for NoiseSweepConfig {
    fn default() -> Self {
        NoiseSweepConfig {
            visual_sigmas: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
            audio_snrs: vec![f64::INFINITY, 70.0, 65.0, 60.0, 55.0, 50.0],
            seeds: vec![0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCell {
    pub method: String,
    /// `visual` or `audio`: which modality was corrupted.
    pub axis: String,
    /// Pixel sigma or SNR in dB (`inf` for clean audio).
    pub level: f64,
    pub seed: u64,
    pub accuracy: f64,
}

fn axis_cells(cfg: &NoiseSweepConfig) -> Vec<(&'static str, f64, NoiseLevel)> {
    let mut out = Vec::new();
    for &s in &cfg.visual_sigmas {
        out.push(("visual", s, if s == 0.0 { NoiseLevel::Clean } else { NoiseLevel::VisualSigma(s) }));
    }
    for &s in &cfg.audio_snrs {
        out.push(("audio", s, if s == f64::INFINITY { NoiseLevel::Clean } else { NoiseLevel::AudioSnr(s) }));
    }
    out
}

/// Runs the sweep. Train, validation and test data are corrupted at the
/// same level; each method trains with its fixed plan and the cell seed.
/// Clean cells are computed once per method and seed and reused for both axes.
pub fn noise_sweep(plans: &[MethodPlan], split: &DatasetSplit, cfg: &NoiseSweepConfig) -> Result<Vec<NoiseCell>> {
    if plans.is_empty() {
        return Err(CmktError::Config("noise sweep needs at least one method plan".into()));
    }
    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        let mut clean: Vec<Option<f64>> = vec![None; plans.len()];
        for (axis, level_value, level) in axis_cells(cfg) {
            let data = corrupt_split(split, level, mix_seed(seed, 0xA5))?;
            for (k, plan) in plans.iter().enumerate() {
                let acc = match (level.is_clean(), clean[k]) {
                    (true, Some(a)) => a,
                    _ => {
                        let mut p = plan.clone();
                        p.override_all(&TrainOverrides { seed: Some(seed), ..Default::default() })?;
                        let out = train_method(&p, &data, &SnapshotOptions::default())?;
                        let a = evaluate_on(&out.model, &data.test)?.accuracy;
                        if level.is_clean() {
                            clean[k] = Some(a);
                        }
                        a
                    }
                };
                log::info!("sweep {} {axis}={level_value} seed {seed}: {acc:.4}", plan.method);
                cells.push(NoiseCell { method: plan.method.to_string(), axis: axis.into(), level: level_value, seed, accuracy: acc });
            }
        }
    }
    Ok(cells)
}

/// Mean accuracy per (method, axis, level) as delimited text.
pub fn noise_table_csv(cells: &[NoiseCell]) -> String {
    let mut keys: Vec<(String, String, f64)> = Vec::new();
    for c in cells {
        let k = (c.method.clone(), c.axis.clone(), c.level);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut out = String::from("method,axis,level,mean_accuracy,runs\n");
    for (m, a, l) in keys {
        let v: Vec<f64> = cells.iter().filter(|c| c.method == m && c.axis == a && c.level == l).map(|c| c.accuracy).collect();
        out.push_str(&format!("{m},{a},{l},{},{}\n", crate::util::mean(&v), v.len()));
    }
    out
}
