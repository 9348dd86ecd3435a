//! Desk-scale paired data with a controllable shared latent.
//!
//! Each sample draws `z = 0.5·s·(2y − 1) + U(−0.25, 0.25)` where `s` is the
//! shared signal strength; the classes separate in `z` iff `s > 0.5`. The
//! image is a soft bright blob of radius `12 + 6z` plus a class-irrelevant
//! ring near the border whose per-sample brightness is
//! `U(0, 1)·visual_nuisance_strength`. The audio is two tones at 3 kHz and
//! 15 kHz whose amplitudes move in opposite directions with `z`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AudioSnippet, PairedSample, VisualFrame, SAMPLE_RATE, SIDE, SNIPPET_LEN};
use crate::error::{CmktError, Result};

pub const RING_RADIUS: f64 = 35.0;
pub const RING_HALF_WIDTH: f64 = 2.5;
const BLOB_LEVEL: f64 = 0.7;
const TONES_HZ: [f64; 2] = [3000.0, 15000.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub shared_signal_strength: f64,
    pub visual_nuisance_strength: f64,
    /// Pixel noise std on the `[0, 1]` scale.
    pub visual_noise_std: f64,
    /// Waveform noise std (tone amplitudes are O(0.5)).
    pub audio_noise_std: f64,
    /// Fraction of defect-free samples.
    pub class_ratio: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_samples: 2000,
            seed: 0,
            shared_signal_strength: 1.0,
            visual_nuisance_strength: 0.0,
            visual_noise_std: 0.0,
            audio_noise_std: 0.0,
            class_ratio: 0.25,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let strengths = [
            self.shared_signal_strength,
            self.visual_nuisance_strength,
            self.visual_noise_std,
            self.audio_noise_std,
        ];
        if strengths.iter().any(|s| !(*s >= 0.0)) {
            return Err(CmktError::Config("synthetic strengths must be >= 0".into()));
        }
        if !(self.class_ratio > 0.0 && self.class_ratio < 1.0) {
            return Err(CmktError::Config(format!("class_ratio must lie in (0, 1), got {}", self.class_ratio)));
        }
        Ok(())
    }

    /// Number of defect-free samples.
    pub fn n_defect_free(&self) -> usize {
        (self.n_samples as f64 * self.class_ratio).round() as usize
    }
}

fn soft_step(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn render_visual(z: f64, ring_amp: f64, noise: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let radius = 12.0 + 6.0 * z;
    let c = (SIDE as f64 - 1.0) / 2.0;
    let (cy, cx) = (c + rng.random_range(-1.5..1.5), c + rng.random_range(-1.5..1.5));
    let normal = (noise > 0.0).then(|| Normal::new(0.0, noise).expect("finite"));
    Array2::from_shape_fn((SIDE, SIDE), |(r, col)| {
        let d_blob = ((r as f64 - cy).powi(2) + (col as f64 - cx).powi(2)).sqrt();
        let d_ring = ((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt();
        let mut v = BLOB_LEVEL * soft_step((radius - d_blob) / 0.8);
        v += ring_amp * (-((d_ring - RING_RADIUS) / (RING_HALF_WIDTH * 0.5)).powi(2)).exp();
        if let Some(n) = &normal {
            v += n.sample(rng);
        }
        v.clamp(0.0, 1.0)
    })
}

fn render_audio(z: f64, noise: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let amps = [0.5 + 0.4 * z, 0.5 - 0.4 * z];
    let phases = [rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.0..std::f64::consts::TAU)];
    let normal = (noise > 0.0).then(|| Normal::new(0.0, noise).expect("finite"));
    (0..SNIPPET_LEN)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE as f64;
            let mut s = 0.0;
            for k in 0..2 {
                s += amps[k] * (std::f64::consts::TAU * TONES_HZ[k] * t + phases[k]).sin();
            }
            if let Some(n) = &normal {
                s += n.sample(rng);
            }
            s
        })
        .collect()
}

/// Generates `cfg.n_samples` pairs with exactly `round(n·class_ratio)`
/// defect-free samples in shuffled order. Fully determined by `cfg.seed`.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Vec<PairedSample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n0 = cfg.n_defect_free();
    let mut labels: Vec<u8> = (0..cfg.n_samples).map(|i| u8::from(i >= n0)).collect();
    labels.shuffle(&mut rng);
    let s = cfg.shared_signal_strength;
    labels
        .into_iter()
        .enumerate()
        .map(|(index, y)| {
            let z = 0.5 * s * (2.0 * y as f64 - 1.0) + rng.random_range(-0.25..0.25);
            let ring_amp = cfg.visual_nuisance_strength * rng.random::<f64>();
            let visual = VisualFrame { pixels: render_visual(z, ring_amp, cfg.visual_noise_std, &mut rng) };
            let audio = AudioSnippet { samples: render_audio(z, cfg.audio_noise_std, &mut rng) };
            PairedSample::new(visual, audio, y, index)
        })
        .collect()
}

/// Pixels of the synthetic nuisance ring: `|d − RING_RADIUS| ≤ RING_HALF_WIDTH`
/// from the image center.
pub fn synthetic_nozzle_mask() -> Array2<bool> {
    let c = (SIDE as f64 - 1.0) / 2.0;
    Array2::from_shape_fn((SIDE, SIDE), |(r, col)| {
        let d = ((r as f64 - c).powi(2) + (col as f64 - c).powi(2)).sqrt();
        (d - RING_RADIUS).abs() <= RING_HALF_WIDTH
    })
}
