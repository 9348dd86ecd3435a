use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::lime::{lime_explain, mask_intersection_count, positive_mask, segment_grid, BatchPredict, Explanation, LimeConfig};
use crate::dataset::{Modality, PairedSample, SIDE};
use crate::diagnostics::{kde, Kde};
use crate::error::{CmktError, Result};
use crate::util::mix_seed;

/// Per-sample LIME audit settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub lime: LimeConfig,
    pub grid: (usize, usize),
    pub top_k: usize,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig { lime: LimeConfig::default(), grid: (8, 8), top_k: 5 }
    }
}

/// One explained sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplainedSample {
    pub index: usize,
    pub label: u8,
    pub explanation: Explanation,
    pub mask: Array2<bool>,
}

/// Explains every sample's `modality` image; the LIME seed is derived from
/// the configured seed and the sample index.
pub fn explain_samples(predict: &BatchPredict<'_>, samples: &[PairedSample], modality: Modality, cfg: &AuditConfig) -> Result<Vec<ExplainedSample>> {
    samples
        .iter()
        .map(|s| {
            let image = s.image(modality);
            let spmap = segment_grid(image, cfg.grid)?;
            let lime = LimeConfig { seed: mix_seed(cfg.lime.seed, s.index as u64), ..cfg.lime };
            let explanation = lime_explain(predict, image, &spmap, &lime)?;
            let mask = positive_mask(&explanation, cfg.top_k);
            Ok(ExplainedSample { index: s.index, label: s.label, explanation, mask })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct IntersectionStats {
    pub counts: Vec<usize>,
    pub mean: f64,
    /// `None` when fewer than two counts are available.
    pub density: Option<Kde>,
}

pub fn intersection_stats(explained: &[ExplainedSample], nozzle_mask: &Array2<bool>) -> Result<IntersectionStats> {
    if explained.is_empty() {
        return Err(CmktError::Empty("no explained samples".into()));
    }
    let counts = explained.iter().map(|e| mask_intersection_count(&e.mask, nozzle_mask)).collect::<Result<Vec<_>>>()?;
    let mean = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
    let as_f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let density = if as_f.len() >= 2 { Some(kde(&as_f, None)?) } else { None };
    Ok(IntersectionStats { counts, mean, density })
}

/// Explains each visual test image and counts positive-mask pixels inside
/// the nozzle mask.
pub fn intersection_distribution(
    predict: &BatchPredict<'_>,
    test: &[PairedSample],
    nozzle_mask: &Array2<bool>,
    cfg: &AuditConfig,
) -> Result<IntersectionStats> {
    if test.is_empty() {
        return Err(CmktError::Empty("empty test set".into()));
    }
    intersection_stats(&explain_samples(predict, test, Modality::Visual, cfg)?, nozzle_mask)
}

/// Per spectrogram row, the number of samples whose positive mask touches
/// that row; overall and per true class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyHistogram {
    pub all: Vec<usize>,
    pub defect_free: Vec<usize>,
    pub defective: Vec<usize>,
}

pub fn frequency_histogram<'a>(masks: impl IntoIterator<Item = (&'a Array2<bool>, u8)>) -> FrequencyHistogram {
    let mut h = FrequencyHistogram { all: vec![0; SIDE], defect_free: vec![0; SIDE], defective: vec![0; SIDE] };
    for (mask, label) in masks {
        for (r, row) in mask.outer_iter().enumerate().take(SIDE) {
            if row.iter().any(|&b| b) {
                h.all[r] += 1;
                if label == 0 {
                    h.defect_free[r] += 1;
                } else {
                    h.defective[r] += 1;
                }
            }
        }
    }
    h
}

/// Row-major `[start, length]` runs of set pixels.
pub fn mask_rle(mask: &Array2<bool>) -> Vec<[usize; 2]> {
    let mut runs: Vec<[usize; 2]> = Vec::new();
    for (i, &b) in mask.iter().enumerate() {
        if !b {
            continue;
        }
        match runs.last_mut() {
            Some(run) if run[0] + run[1] == i => run[1] += 1,
            _ => runs.push([i, 1]),
        }
    }
    runs
}

pub fn mask_from_rle(runs: &[[usize; 2]], shape: (usize, usize)) -> Result<Array2<bool>> {
    let mut flat = vec![false; shape.0 * shape.1];
    for &[start, len] in runs {
        flat.get_mut(start..start + len)
            .ok_or_else(|| CmktError::InvalidArgument(format!("run {start}+{len} outside mask")))?
            .fill(true);
    }
    Ok(Array2::from_shape_vec(shape, flat).expect("sized"))
}

/// Reads a mask from a PNG (nonzero luminance is set) or a text grid of
/// `0`/`1` characters, one line per row.
pub fn read_mask(path: &Path) -> Result<Array2<bool>> {
    let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let mask = if is_png {
        let img = image::open(path)?.to_luma8();
        Array2::from_shape_fn((img.height() as usize, img.width() as usize), |(r, c)| img.get_pixel(c as u32, r as u32)[0] > 0)
    } else {
        let text = fs::read_to_string(path).map_err(|e| CmktError::io(path, e))?;
        let rows: Vec<Vec<bool>> = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.chars()
                    .filter(|c| !c.is_whitespace())
                    .map(|c| match c {
                        '0' | '.' => Ok(false),
                        '1' | '#' => Ok(true),
                        other => Err(CmktError::Dataset(format!("{}: bad mask character `{other}`", path.display()))),
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let w = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != w) {
            return Err(CmktError::Dataset(format!("{}: ragged mask rows", path.display())));
        }
        Array2::from_shape_vec((rows.len(), w), rows.into_iter().flatten().collect()).expect("rectangular")
    };
    if mask.dim() != (SIDE, SIDE) {
        return Err(CmktError::shape("[80, 80]", format!("{:?}", mask.dim())));
    }
    Ok(mask)
}

/// Writes a PNG when the extension is `.png`, a `0`/`1` text grid otherwise.
pub fn write_mask(path: &Path, mask: &Array2<bool>) -> Result<()> {
    if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        let (h, w) = mask.dim();
        let img = image::GrayImage::from_fn(w as u32, h as u32, |c, r| image::Luma([if mask[[r as usize, c as usize]] { 255 } else { 0 }]));
        img.save(path)?;
    } else {
        let mut text = String::with_capacity(mask.len() + mask.nrows());
        for row in mask.outer_iter() {
            text.extend(row.iter().map(|&b| if b { '1' } else { '0' }));
            text.push('\n');
        }
        fs::write(path, text).map_err(|e| CmktError::io(path, e))?;
    }
    Ok(())
}

/// One line of the explanation dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub index: usize,
    pub label: u8,
    pub prediction: f64,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub fidelity: f64,
    pub positive_superpixels: usize,
    pub mask_rle: Vec<[usize; 2]>,
}

impl From<&ExplainedSample> for ExplanationRecord {
    fn from(e: &ExplainedSample) -> Self {
        ExplanationRecord {
            index: e.index,
            label: e.label,
            prediction: e.explanation.prediction,
            weights: e.explanation.weights.clone(),
            intercept: e.explanation.intercept,
            fidelity: e.explanation.fidelity,
            positive_superpixels: e.explanation.weights.iter().filter(|&&w| w > 0.0).count(),
            mask_rle: mask_rle(&e.mask),
        }
    }
}

/// JSON lines, one [`ExplanationRecord`] per sample.
pub fn write_explanations(path: &Path, explained: &[ExplainedSample]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| CmktError::io(path, e))?;
    for e in explained {
        serde_json::to_writer(&mut f, &ExplanationRecord::from(e))?;
        f.write_all(b"\n").map_err(|err| CmktError::io(path, err))?;
    }
    Ok(())
}

pub fn read_explanations(path: &Path) -> Result<Vec<ExplanationRecord>> {
    let text = fs::read_to_string(path).map_err(|e| CmktError::io(path, e))?;
    text.lines().filter(|l| !l.is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn histogram_examples() {
        let mut m = Array2::from_elem((80, 80), false);
        for r in 0..10 {
            for c in 0..80 {
                m[[r, c]] = true;
            }
        }
        let h = frequency_histogram([(&m, 1u8)]);
        assert!(h.all[..10].iter().all(|&c| c == 1));
        assert!(h.all[10..].iter().all(|&c| c == 0));
        assert_eq!(h.defective, h.all);
        let empty = Array2::from_elem((80, 80), false);
        let h = frequency_histogram([(&empty, 0u8), (&empty, 1)]);
        assert!(h.all.iter().all(|&c| c == 0));
    }

    #[test]
    fn empty_nozzle_mask_gives_zero_counts() {
        let spmap = segment_grid(&Array2::zeros((80, 80)), (8, 8)).unwrap();
        let e = ExplainedSample {
            index: 0,
            label: 1,
            explanation: Explanation { weights: vec![1.0; 64], intercept: 0.0, superpixel_map: spmap, fidelity: 1.0, prediction: 0.5 },
            mask: Array2::from_elem((80, 80), true),
        };
        let stats = intersection_stats(&[e.clone(), e], &Array2::from_elem((80, 80), false)).unwrap();
        assert_eq!(stats.counts, vec![0, 0]);
    }

    #[test]
    fn mask_files_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let m = Array2::from_shape_fn((80, 80), |(r, c)| (r * c) % 7 == 0);
        for name in ["m.png", "m.txt"] {
            let p = d.path().join(name);
            write_mask(&p, &m).unwrap();
            assert_eq!(read_mask(&p).unwrap(), m);
        }
    }

    proptest! {
        #[test]
        fn rle_round_trip(bits in proptest::collection::vec(any::<bool>(), 64)) {
            let m = Array2::from_shape_vec((8, 8), bits).unwrap();
            prop_assert_eq!(mask_from_rle(&mask_rle(&m), (8, 8)).unwrap(), m);
        }
    }
}
