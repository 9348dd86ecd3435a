//! Text export of encoded vectors for external embedding tools.
//!
//! Each file holds one block per modality:
//!
//! ```text
//! #block epoch=150 modality=visual dim=3200 count=435
//! 1,0.0123,0.5,...
//! ```
//!
//! Rows are `label,v1,...,vd` with shortest round-trip float formatting.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::dataset::{labels, stack_images, Modality, PairedSample};
use crate::error::{CmktError, Result};
use crate::models::{encode, EncodedBatch, TrainableModel};

/// Epochs at which snapshots are taken: every `every`-th epoch up to `epochs`.
pub fn export_schedule(epochs: usize, every: usize) -> Vec<usize> {
    if every == 0 {
        return Vec::new();
    }
    (1..=epochs / every).map(|k| k * every).collect()
}

pub fn encodings_file(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("encodings_epoch{epoch:05}.txt"))
}

fn write_block(out: &mut String, epoch: usize, b: &EncodedBatch) {
    let _ = writeln!(out, "#block epoch={epoch} modality={} dim={} count={}", b.modality, b.dim(), b.len());
    for (row, l) in b.vectors.outer_iter().zip(&b.labels) {
        out.push_str(&l.to_string());
        for v in row {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
}

/// Encodes `samples` in both modalities with the shared encoder and writes
/// `2n` labeled rows to `encodings_epoch<epoch>.txt` under `dir`.
pub fn export_encodings(encoder: &TrainableModel, samples: &[PairedSample], epoch: usize, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CmktError::io(dir, e))?;
    let y = labels(samples);
    let mut text = String::new();
    for m in [Modality::Visual, Modality::Audio] {
        let b = encode(encoder, &stack_images(samples, m), &y, m)?;
        write_block(&mut text, epoch, &b);
    }
    let path = encodings_file(dir, epoch);
    fs::write(&path, text).map_err(|e| CmktError::io(&path, e))?;
    Ok(path)
}

/// Parses a file written by [`export_encodings`] into `(epoch, batch)` blocks.
pub fn read_encodings(path: &Path) -> Result<Vec<(usize, EncodedBatch)>> {
    let text = fs::read_to_string(path).map_err(|e| CmktError::io(path, e))?;
    let bad = |msg: &str| CmktError::Dataset(format!("{}: {msg}", path.display()));
    let mut out = Vec::new();
    let mut lines = text.lines().peekable();
    while let Some(header) = lines.next() {
        let fields = header.strip_prefix("#block ").ok_or_else(|| bad("expected #block header"))?;
        let mut epoch = None;
        let mut modality = None;
        let mut dim = None;
        let mut count = None;
        for kv in fields.split_whitespace() {
            match kv.split_once('=') {
                Some(("epoch", v)) => epoch = v.parse().ok(),
                Some(("modality", v)) => modality = v.parse::<Modality>().ok(),
                Some(("dim", v)) => dim = v.parse().ok(),
                Some(("count", v)) => count = v.parse().ok(),
                _ => return Err(bad(&format!("unknown header field `{kv}`"))),
            }
        }
        let (Some(epoch), Some(modality), Some(dim), Some(count)) = (epoch, modality, dim, count) else {
            return Err(bad("incomplete header"));
        };
        let mut vectors = Array2::zeros((count, dim));
        let mut lab = Vec::with_capacity(count);
        for i in 0..count {
            let line = lines.next().ok_or_else(|| bad("truncated block"))?;
            let mut parts = line.split(',');
            lab.push(parts.next().and_then(|l| l.parse().ok()).ok_or_else(|| bad("bad label"))?);
            for j in 0..dim {
                vectors[[i, j]] = parts.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad value"))?;
            }
        }
        out.push((epoch, EncodedBatch::new(vectors, lab, modality)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, SyntheticConfig};
    use crate::models::{build_model, layer::*, ArchitectureSpec};

    #[test]
    fn schedule_every_150_over_1200() {
        assert_eq!(export_schedule(1200, 150).len(), 8);
        assert_eq!(export_schedule(1200, 150).last(), Some(&1200));
    }

    #[test]
    fn export_rows_and_reproducibility() {
        let samples = generate_synthetic(&SyntheticConfig { n_samples: 6, ..Default::default() }).unwrap();
        let spec = ArchitectureSpec::new(vec![1, 80, 80], vec![conv(2, 4, 4, 0), relu(), maxpool(4), flatten()]);
        let enc = build_model(&spec, 0).unwrap();
        let d = tempfile::tempdir().unwrap();
        let p = export_encodings(&enc, &samples, 3, d.path()).unwrap();
        let first = fs::read(&p).unwrap();
        export_encodings(&enc, &samples, 3, d.path()).unwrap();
        assert_eq!(first, fs::read(&p).unwrap());
        let blocks = read_encodings(&p).unwrap();
        assert_eq!(blocks.iter().map(|(_, b)| b.len()).sum::<usize>(), 12);
        assert_eq!(blocks[0].1.modality, Modality::Visual);
        let direct = encode(&enc, &stack_images(&samples, Modality::Audio), &labels(&samples), Modality::Audio).unwrap();
        assert_eq!(blocks[1].1, direct);
    }
}
