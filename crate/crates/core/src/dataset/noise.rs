use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AudioSnippet, DatasetSplit, PairedSample, VisualFrame};
use crate::error::{CmktError, Result};
use crate::util::mix_seed;

/// Adds `N(0, sigma^2)` on the 0–255 scale, clipping back into range.
/// `sigma = 0` returns the frame unchanged.
pub fn add_visual_awgn(frame: &VisualFrame, sigma: f64, seed: u64) -> Result<VisualFrame> {
    if !(sigma >= 0.0) {
        return Err(CmktError::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(frame.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let pixels = frame.pixels.mapv(|p| (p * 255.0 + normal.sample(&mut rng)).clamp(0.0, 255.0) / 255.0);
    Ok(VisualFrame { pixels })
}

/// Adds white noise to the waveform so that `10·log10(P_signal / P_noise)`
/// equals `snr_db`, with power the mean squared sample. `+inf` is the
/// identity.
pub fn add_audio_awgn(snippet: &AudioSnippet, snr_db: f64, seed: u64) -> Result<AudioSnippet> {
    if snr_db == f64::INFINITY {
        return Ok(snippet.clone());
    }
    if snr_db.is_nan() {
        return Err(CmktError::InvalidArgument("snr is NaN".into()));
    }
    let power = snippet.power();
    if power == 0.0 {
        return Err(CmktError::Undefined("SNR of a zero-power snippet".into()));
    }
    let std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("finite std");
    Ok(AudioSnippet { samples: snippet.samples.iter().map(|s| s + normal.sample(&mut rng)).collect() })
}

/// One corruption level of the noise sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "level", rename_all = "snake_case")]
pub enum NoiseLevel {
    Clean,
    VisualSigma(f64),
    AudioSnr(f64),
}

impl NoiseLevel {
    pub fn is_clean(&self) -> bool {
        matches!(self, NoiseLevel::Clean | NoiseLevel::VisualSigma(0.0))
            || matches!(self, NoiseLevel::AudioSnr(s) if *s == f64::INFINITY)
    }
}

fn corrupt_sample(s: &PairedSample, level: NoiseLevel, seed: u64) -> Result<PairedSample> {
    let seed = mix_seed(seed, s.index as u64);
    match level {
        NoiseLevel::Clean => Ok(s.clone()),
        NoiseLevel::VisualSigma(sigma) => Ok(PairedSample { visual: add_visual_awgn(&s.visual, sigma, seed)?, ..s.clone() }),
        NoiseLevel::AudioSnr(snr) => {
            let audio = add_audio_awgn(&s.audio_raw, snr, seed)?;
            PairedSample::new(s.visual.clone(), audio, s.label, s.index)
        }
    }
}

/// Corrupts every part of the split at the same level; audio noise is
/// applied to the waveform and the spectrogram regenerated.
pub fn corrupt_split(split: &DatasetSplit, level: NoiseLevel, seed: u64) -> Result<DatasetSplit> {
    if level.is_clean() {
        return Ok(split.clone());
    }
    let run = |v: &[PairedSample]| v.iter().map(|s| corrupt_sample(s, level, seed)).collect::<Result<Vec<_>>>();
    Ok(DatasetSplit { train: run(&split.train)?, validation: run(&split.validation)?, test: run(&split.test)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SAMPLE_RATE, SNIPPET_LEN};
    use ndarray::Array2;

    fn sine() -> AudioSnippet {
        // amplitude sqrt(2), 100 whole periods: unit power
        AudioSnippet::new(
            (0..SNIPPET_LEN)
                .map(|i| 2f64.sqrt() * (2.0 * std::f64::consts::PI * 3000.0 * i as f64 / SAMPLE_RATE as f64).sin())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn visual_zero_sigma_identity() {
        let f = VisualFrame::new(Array2::from_elem((80, 80), 0.37)).unwrap();
        assert_eq!(add_visual_awgn(&f, 0.0, 1).unwrap(), f);
        assert!(add_visual_awgn(&f, -1.0, 1).is_err());
    }

    #[test]
    fn visual_sigma_25_statistics() {
        let f = VisualFrame::new(Array2::from_elem((80, 80), 0.5)).unwrap();
        let n = add_visual_awgn(&f, 25.0, 3).unwrap();
        let d: Vec<f64> = n.pixels.iter().map(|p| p * 255.0 - 127.5).collect();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
        assert!((sd - 25.0).abs() < 1.5, "sd {sd}");
    }

    #[test]
    fn visual_clipping() {
        let f = VisualFrame::new(Array2::ones((80, 80))).unwrap();
        let n = add_visual_awgn(&f, 10.0, 3).unwrap();
        assert!(n.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn audio_snr_oracle() {
        let s = sine();
        assert!((s.power() - 1.0).abs() < 1e-3);
        let n = add_audio_awgn(&s, 50.0, 9).unwrap();
        let noise_power =
            n.samples.iter().zip(&s.samples).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / SNIPPET_LEN as f64;
        let snr = 10.0 * (s.power() / noise_power).log10();
        assert!((snr - 50.0).abs() < 0.5, "snr {snr}");
        assert_eq!(n, add_audio_awgn(&s, 50.0, 9).unwrap());
        assert_eq!(add_audio_awgn(&s, f64::INFINITY, 9).unwrap(), s);
    }

    #[test]
    fn audio_zero_power_is_undefined() {
        let z = AudioSnippet::new(vec![0.0; SNIPPET_LEN]).unwrap();
        assert!(matches!(add_audio_awgn(&z, 60.0, 0), Err(CmktError::Undefined(_))));
    }
}
