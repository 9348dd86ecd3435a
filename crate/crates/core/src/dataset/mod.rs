//! Paired melt-pool image / acoustic data: domain types, preprocessing,
//! splitting, noise injection, synthetic generation and on-disk formats.

mod io;
mod noise;
mod preprocess;
mod spectrogram;
mod split;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Array3, Array4, ArrayD, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{CmktError, Result};

pub use io::{
    load_cache, load_raw_dataset, save_cache, write_raw_dataset, CacheEntry, CacheManifest, PreprocessParams,
};
pub use noise::{add_audio_awgn, add_visual_awgn, corrupt_split, NoiseLevel};
pub use preprocess::{grayscale_resize, segment_audio};
pub use spectrogram::{make_spectrogram, FFT_SIZE, HOP, KEPT_BINS};
pub use split::{split_dataset, split_sizes};
pub use synthetic::{generate_synthetic, synthetic_nozzle_mask, SyntheticConfig, RING_RADIUS, RING_HALF_WIDTH};

pub const SAMPLE_RATE: u32 = 44_100;
pub const FPS: u32 = 30;
/// Samples per 33.3 ms snippet.
pub const SNIPPET_LEN: usize = 1470;
pub const RAW_SIDE: usize = 480;
pub const SIDE: usize = 80;
/// Width of one spectrogram row in Hz.
pub const BIN_HZ: f64 = SAMPLE_RATE as f64 / FFT_SIZE as f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
}

impl Modality {
    pub fn other(self) -> Modality {
        match self {
            Modality::Visual => Modality::Audio,
            Modality::Audio => Modality::Visual,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Audio => "audio",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = CmktError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "visual" | "v" | "image" => Ok(Modality::Visual),
            "audio" | "a" | "acoustic" => Ok(Modality::Audio),
            other => Err(CmktError::InvalidArgument(format!("unknown modality `{other}`"))),
        }
    }
}

/// Raw RGB camera frame, `480×480×3`, values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawVisualFrame {
    pub pixels: Array3<f64>,
    pub index: usize,
}

impl RawVisualFrame {
    pub fn new(pixels: Array3<f64>, index: usize) -> Result<Self> {
        if pixels.shape() != [RAW_SIDE, RAW_SIDE, 3] {
            return Err(CmktError::shape("[480, 480, 3]", format!("{:?}", pixels.shape())));
        }
        if pixels.iter().any(|v| !(0.0..=255.0).contains(v)) {
            return Err(CmktError::InvalidArgument("raw pixel outside [0, 255]".into()));
        }
        Ok(RawVisualFrame { pixels, index })
    }
}

/// Grayscale `80×80` frame with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFrame {
    pub pixels: Array2<f64>,
}

impl VisualFrame {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        check_unit_image(&pixels)?;
        Ok(VisualFrame { pixels })
    }
}

/// One 33.3 ms window of 44.1 kHz audio.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSnippet {
    pub samples: Vec<f64>,
}

impl AudioSnippet {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.len() != SNIPPET_LEN {
            return Err(CmktError::shape(format!("{SNIPPET_LEN} samples"), format!("{} samples", samples.len())));
        }
        Ok(AudioSnippet { samples })
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    /// Mean squared sample value.
    pub fn power(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }
}

/// `80×80` linear-frequency magnitude image; row `r` covers
/// `[r·BIN_HZ, (r+1)·BIN_HZ)`, columns are time frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub pixels: Array2<f64>,
}

impl Spectrogram {
    /// Frequency range `[lo, hi)` in Hz covered by `row`.
    pub fn row_band(row: usize) -> (f64, f64) {
        (row as f64 * BIN_HZ, (row + 1) as f64 * BIN_HZ)
    }
}

fn check_unit_image(p: &Array2<f64>) -> Result<()> {
    if p.shape() != [SIDE, SIDE] {
        return Err(CmktError::shape("[80, 80]", format!("{:?}", p.shape())));
    }
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(CmktError::InvalidArgument("pixel outside [0, 1]".into()));
    }
    Ok(())
}

/// One synchronized image/audio pair sharing a label
/// (0 = defect-free, 1 = defective).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub visual: VisualFrame,
    pub audio_raw: AudioSnippet,
    pub audio_spec: Spectrogram,
    pub label: u8,
    pub index: usize,
}

impl PairedSample {
    /// Builds a pair, deriving the spectrogram from the waveform.
    pub fn new(visual: VisualFrame, audio_raw: AudioSnippet, label: u8, index: usize) -> Result<Self> {
        if label > 1 {
            return Err(CmktError::Dataset(format!("sample {index}: label {label} outside {{0, 1}}")));
        }
        let audio_spec = make_spectrogram(&audio_raw);
        Ok(PairedSample { visual, audio_raw, audio_spec, label, index })
    }

    pub fn image(&self, modality: Modality) -> &Array2<f64> {
        match modality {
            Modality::Visual => &self.visual.pixels,
            Modality::Audio => &self.audio_spec.pixels,
        }
    }
}

/// Train / validation / test partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Split<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

pub type DatasetSplit = Split<PairedSample>;

impl<T> Default for Split<T> {
    fn default() -> Self {
        Split { train: Vec::new(), validation: Vec::new(), test: Vec::new() }
    }
}

impl<T> Split<T> {
    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.validation.len(), self.test.len())
    }

    pub fn parts(&self) -> [(&'static str, &[T]); 3] {
        [("train", &self.train), ("validation", &self.validation), ("test", &self.test)]
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> Split<U> {
        Split {
            train: self.train.iter().map(&mut f).collect(),
            validation: self.validation.iter().map(&mut f).collect(),
            test: self.test.iter().map(&mut f).collect(),
        }
    }
}

/// Stacks one modality into a `[N, 1, 80, 80]` tensor.
pub fn stack_images(samples: &[PairedSample], modality: Modality) -> ArrayD<f64> {
    let mut out = Array4::zeros((samples.len(), 1, SIDE, SIDE));
    for (mut dst, s) in out.outer_iter_mut().zip(samples) {
        dst.index_axis_mut(Axis(0), 0).assign(s.image(modality));
    }
    out.into_dyn()
}

/// Stacks both modalities as channels `[visual, audio]`: `[N, 2, 80, 80]`.
pub fn stack_channels(samples: &[PairedSample]) -> ArrayD<f64> {
    let mut out = Array4::zeros((samples.len(), 2, SIDE, SIDE));
    for (mut dst, s) in out.outer_iter_mut().zip(samples) {
        dst.index_axis_mut(Axis(0), 0).assign(&s.visual.pixels);
        dst.index_axis_mut(Axis(0), 1).assign(&s.audio_spec.pixels);
    }
    out.into_dyn()
}

pub fn labels(samples: &[PairedSample]) -> Vec<u8> {
    samples.iter().map(|s| s.label).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modality_parse_round_trip() {
        for m in [Modality::Visual, Modality::Audio] {
            assert_eq!(m.as_str().parse::<Modality>().unwrap(), m);
            assert_eq!(m.other().other(), m);
        }
        assert!("smell".parse::<Modality>().is_err());
    }

    #[test]
    fn frequency_partition_covers_22khz() {
        assert_eq!(KEPT_BINS, 80);
        assert!((BIN_HZ - 275.625).abs() < 1e-12);
        let (lo, _) = Spectrogram::row_band(0);
        let (_, hi) = Spectrogram::row_band(79);
        assert_eq!(lo, 0.0);
        assert!((hi - 22_050.0).abs() < 1e-9);
    }

    #[test]
    fn snippet_length_is_checked() {
        assert!(AudioSnippet::new(vec![0.0; 1469]).is_err());
        assert!(AudioSnippet::new(vec![0.0; SNIPPET_LEN]).is_ok());
    }
}
