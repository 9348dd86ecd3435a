//! Scalar objectives: the contrastive semantic-alignment family, weighted
//! binary cross-entropy, and mean squared error.
//!
//! Pair terms are normalized per class group: the alignment loss sums, over
//! classes, the mean half squared distance of all same-class cross-modal
//! pairs; the separation loss sums, over ordered class pairs `(a, b)` with
//! `a != b`, the mean hinge term. A group without realized pairs contributes 0.

use ndarray::{Array2, ArrayD, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CmktError, Result};
use crate::models::EncodedBatch;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Per-class loss weights, indexed by label (0 = defect-free, 1 = defective).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub defect_free: f64,
    pub defective: f64,
}

impl ClassWeights {
    pub fn uniform() -> Self {
        ClassWeights { defect_free: 1.0, defective: 1.0 }
    }

    /// Weights with `defect_free / defective = ratio` and mean 1.
    pub fn from_ratio(ratio: f64) -> Self {
        let defective = 2.0 / (1.0 + ratio);
        ClassWeights { defect_free: ratio * defective, defective }
    }

    pub fn get(&self, label: u8) -> f64 {
        if label == 0 {
            self.defect_free
        } else {
            self.defective
        }
    }
}

impl Default for ClassWeights {
    /// defective : defect-free = 1 : 3.
    fn default() -> Self {
        ClassWeights::from_ratio(3.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CcsaConfig {
    pub margin: f64,
    pub tradeoff: f64,
    pub class_weights: ClassWeights,
}

impl Default for CcsaConfig {
    fn default() -> Self {
        CcsaConfig { margin: 1.0, tradeoff: 0.5, class_weights: ClassWeights::default() }
    }
}

impl CcsaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) {
            return Err(CmktError::Config(format!("margin must be > 0, got {}", self.margin)));
        }
        if !(0.0..=1.0).contains(&self.tradeoff) {
            return Err(CmktError::Config(format!("tradeoff must lie in [0, 1], got {}", self.tradeoff)));
        }
        if !(self.class_weights.defect_free > 0.0 && self.class_weights.defective > 0.0) {
            return Err(CmktError::Config("class weights must be positive".into()));
        }
        Ok(())
    }
}

fn check_dims(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(CmktError::shape(format!("dim {}", u.len()), format!("dim {}", v.len())));
    }
    Ok(())
}

fn sq_dist(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// `||u - v||^2 / 2`.
pub fn pair_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dims(u, v)?;
    Ok(sq_dist(u, v) / 2.0)
}

/// `max(0, m - ||u - v||)^2 / 2`.
pub fn pair_similarity(u: &[f64], v: &[f64], margin: f64) -> Result<f64> {
    check_dims(u, v)?;
    if !(margin > 0.0) {
        return Err(CmktError::InvalidArgument(format!("margin must be > 0, got {margin}")));
    }
    let short = (margin - sq_dist(u, v).sqrt()).max(0.0);
    Ok(short * short / 2.0)
}

/// Alignment and separation values together with their gradients w.r.t.
/// every visual and audio embedding row.
#[derive(Debug, Clone)]
pub struct AlignmentTerms {
    pub semantic_alignment: f64,
    pub separation: f64,
    pub grad_visual: Array2<f64>,
    pub grad_audio: Array2<f64>,
}

impl AlignmentTerms {
    /// `L_SA + L_S`.
    pub fn contrastive(&self) -> f64 {
        self.semantic_alignment + self.separation
    }
}

fn check_batches(v: &ArrayView2<f64>, yv: &[u8], a: &ArrayView2<f64>, ya: &[u8]) -> Result<()> {
    if v.nrows() == 0 || a.nrows() == 0 {
        return Err(CmktError::Empty("alignment losses need both modality batches".into()));
    }
    if v.ncols() != a.ncols() {
        return Err(CmktError::shape(format!("dim {}", v.ncols()), format!("dim {}", a.ncols())));
    }
    if v.nrows() != yv.len() || a.nrows() != ya.len() {
        return Err(CmktError::shape("one label per row", "label count mismatch"));
    }
    Ok(())
}

fn class_count(labels: &[u8]) -> usize {
    labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
}

/// Both pair losses and their embedding gradients in one pass over pairs.
pub fn contrastive_alignment(
    v: ArrayView2<f64>,
    yv: &[u8],
    a: ArrayView2<f64>,
    ya: &[u8],
    margin: f64,
) -> Result<AlignmentTerms> {
    check_batches(&v, yv, &a, ya)?;
    if !(margin > 0.0) {
        return Err(CmktError::InvalidArgument(format!("margin must be > 0, got {margin}")));
    }
    let classes = class_count(yv).max(class_count(ya));
    let mut nv = vec![0usize; classes];
    let mut na = vec![0usize; classes];
    for &l in yv {
        nv[l as usize] += 1;
    }
    for &l in ya {
        na[l as usize] += 1;
    }
    let v = v.as_standard_layout();
    let a = a.as_standard_layout();
    let mut gv = Array2::zeros(v.raw_dim());
    let mut ga = Array2::zeros(a.raw_dim());
    let mut sa = 0.0;
    let mut sep = 0.0;
    let dim = v.ncols();
    let mut diff = vec![0.0; dim];
    for (i, vi) in v.outer_iter().enumerate() {
        let vi = vi.as_slice().expect("standard layout");
        for (j, aj) in a.outer_iter().enumerate() {
            let aj = aj.as_slice().expect("standard layout");
            let (ci, cj) = (yv[i] as usize, ya[j] as usize);
            let pairs = (nv[ci] * na[cj]) as f64;
            let mut d2 = 0.0;
            for ((d, x), y) in diff.iter_mut().zip(vi).zip(aj) {
                *d = x - y;
                d2 += *d * *d;
            }
            // coefficient c such that dL/dv_i += c * (v_i - a_j), dL/da_j -= same.
            let c = if ci == cj {
                sa += d2 / (2.0 * pairs);
                1.0 / pairs
            } else {
                let dist = d2.sqrt();
                let short = margin - dist;
                if short <= 0.0 {
                    continue;
                }
                sep += short * short / (2.0 * pairs);
                if dist > 0.0 {
                    -short / (dist * pairs)
                } else {
                    0.0
                }
            };
            let mut gvi = gv.row_mut(i);
            for (g, d) in gvi.iter_mut().zip(&diff) {
                *g += c * d;
            }
            let mut gaj = ga.row_mut(j);
            for (g, d) in gaj.iter_mut().zip(&diff) {
                *g -= c * d;
            }
        }
    }
    Ok(AlignmentTerms { semantic_alignment: sa, separation: sep, grad_visual: gv, grad_audio: ga })
}

/// Semantic alignment loss over all same-class cross-modal pairs.
pub fn semantic_alignment_loss(ev: &EncodedBatch, ea: &EncodedBatch) -> Result<f64> {
    // The margin does not enter the alignment term.
    Ok(contrastive_alignment(ev.vectors.view(), &ev.labels, ea.vectors.view(), &ea.labels, 1.0)?.semantic_alignment)
}

/// Separation loss over all cross-class cross-modal pairs.
pub fn separation_loss(ev: &EncodedBatch, ea: &EncodedBatch, margin: f64) -> Result<f64> {
    Ok(contrastive_alignment(ev.vectors.view(), &ev.labels, ea.vectors.view(), &ea.labels, margin)?.separation)
}

fn check_labels(probs: &[f64], labels: &[u8]) -> Result<()> {
    if probs.len() != labels.len() {
        return Err(CmktError::shape(format!("{} labels", probs.len()), format!("{} labels", labels.len())));
    }
    if probs.is_empty() {
        return Err(CmktError::Empty("no predictions".into()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(CmktError::InvalidArgument(format!("label {l} outside {{0, 1}}")));
    }
    Ok(())
}

/// Class-weighted binary cross-entropy averaged over samples.
pub fn weighted_bce(probs: &[f64], labels: &[u8], weights: ClassWeights) -> Result<f64> {
    Ok(weighted_bce_grad(probs, labels, weights)?.0)
}

/// Weighted BCE and its gradient w.r.t. each probability.
pub fn weighted_bce_grad(probs: &[f64], labels: &[u8], weights: ClassWeights) -> Result<(f64, Vec<f64>)> {
    check_labels(probs, labels)?;
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        let w = weights.get(y);
        let y = y as f64;
        loss += w * (-y * p.ln() - (1.0 - y) * (1.0 - p).ln());
        grad.push(w * (-y / p + (1.0 - y) / (1.0 - p)) / n);
    }
    Ok((loss / n, grad))
}

/// `(L_V + L_A) / 2`.
pub fn mean_classification_loss(visual: f64, audio: f64) -> f64 {
    (visual + audio) / 2.0
}

/// `(1 - gamma)(L_SA + L_S) + gamma * L_C`.
pub fn ccsa_loss(semantic_alignment: f64, separation: f64, classification: f64, tradeoff: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&tradeoff) {
        return Err(CmktError::InvalidArgument(format!("tradeoff {tradeoff} outside [0, 1]")));
    }
    if tradeoff == 1.0 {
        return Ok(classification);
    }
    Ok((1.0 - tradeoff) * (semantic_alignment + separation) + tradeoff * classification)
}

/// Mean squared elementwise difference.
pub fn mse(a: &ArrayD<f64>, b: &ArrayD<f64>) -> Result<f64> {
    Ok(mse_grad(a, b)?.0)
}

/// MSE and its gradient w.r.t. `a`.
pub fn mse_grad(a: &ArrayD<f64>, b: &ArrayD<f64>) -> Result<(f64, ArrayD<f64>)> {
    if a.shape() != b.shape() {
        return Err(CmktError::shape(format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    if a.is_empty() {
        return Err(CmktError::Empty("mse of empty tensors".into()));
    }
    let n = a.len() as f64;
    let diff = a - b;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff * (2.0 / n)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Modality;
    use ndarray::{array, IxDyn};

    fn batch(rows: Vec<Vec<f64>>, labels: Vec<u8>, modality: Modality) -> EncodedBatch {
        let d = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        EncodedBatch::new(Array2::from_shape_vec((labels.len(), d), flat).unwrap(), labels, modality).unwrap()
    }

    #[test]
    fn pair_distance_examples() {
        assert_eq!(pair_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5);
        assert_eq!(pair_distance(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert!(pair_distance(&[0.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn pair_similarity_examples() {
        assert_eq!(pair_similarity(&[0.0, 0.0], &[2.0, 0.0], 1.0).unwrap(), 0.0);
        assert!((pair_similarity(&[0.0, 0.0], &[0.5, 0.0], 1.0).unwrap() - 0.125).abs() < 1e-15);
        assert_eq!(pair_similarity(&[1.0, 1.0], &[1.0, 1.0], 1.0).unwrap(), 0.5);
    }

    #[test]
    fn alignment_examples() {
        let v = batch(vec![vec![0.0, 0.0]], vec![0], Modality::Visual);
        let a = batch(vec![vec![3.0, 4.0]], vec![0], Modality::Audio);
        assert_eq!(semantic_alignment_loss(&v, &a).unwrap(), 12.5);
        let same = batch(vec![vec![0.3, 0.7]], vec![1], Modality::Audio);
        let v1 = batch(vec![vec![0.3, 0.7]], vec![1], Modality::Visual);
        assert_eq!(semantic_alignment_loss(&v1, &same).unwrap(), 0.0);
    }

    #[test]
    fn separation_examples() {
        let v = batch(vec![vec![0.0, 0.0]], vec![0], Modality::Visual);
        let a = batch(vec![vec![0.5, 0.0]], vec![1], Modality::Audio);
        assert!((separation_loss(&v, &a, 1.0).unwrap() - 0.125).abs() < 1e-15);
        let far = batch(vec![vec![5.0, 0.0]], vec![1], Modality::Audio);
        assert_eq!(separation_loss(&v, &far, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn empty_batches_are_errors() {
        let v = batch(vec![vec![0.0]], vec![0], Modality::Visual);
        let empty = EncodedBatch::new(Array2::zeros((0, 1)), vec![], Modality::Audio).unwrap();
        assert!(semantic_alignment_loss(&v, &empty).is_err());
        assert!(separation_loss(&empty, &v, 1.0).is_err());
    }

    #[test]
    fn bce_examples() {
        let l = weighted_bce(&[0.5, 0.5], &[0, 1], ClassWeights::uniform()).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
        let perfect = weighted_bce(&[0.0, 1.0], &[0, 1], ClassWeights::uniform()).unwrap();
        assert!(perfect < 2e-7);
        assert!(weighted_bce(&[0.5], &[2], ClassWeights::uniform()).is_err());
    }

    #[test]
    fn default_weights_are_three_to_one_mean_one() {
        let w = ClassWeights::default();
        assert!((w.defect_free / w.defective - 3.0).abs() < 1e-12);
        assert!(((w.defect_free + w.defective) / 2.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ccsa_examples() {
        assert_eq!(mean_classification_loss(0.4, 0.2), 0.30000000000000004);
        assert_eq!(mean_classification_loss(0.7, 0.7), 0.7);
        assert_eq!(mean_classification_loss(0.0, 1.0), 0.5);
        assert_eq!(ccsa_loss(0.2, 0.1, 0.4, 1.0).unwrap(), 0.4);
        assert!((ccsa_loss(0.2, 0.1, 0.4, 0.5).unwrap() - 0.35).abs() < 1e-15);
        assert_eq!(ccsa_loss(0.2, 0.1, 0.4, 0.0).unwrap(), 0.2 + 0.1);
        assert!(ccsa_loss(0.2, 0.1, 0.4, 1.5).is_err());
    }

    #[test]
    fn mse_examples() {
        let a = array![0.0, 0.0].into_dyn();
        let b = array![2.0, 2.0].into_dyn();
        assert_eq!(mse(&a, &b).unwrap(), 4.0);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert!(mse(&a, &ArrayD::zeros(IxDyn(&[3]))).is_err());
    }

    #[test]
    fn ccsa_config_validation() {
        assert!(CcsaConfig::default().validate().is_ok());
        assert!(CcsaConfig { margin: 0.0, ..Default::default() }.validate().is_err());
        assert!(CcsaConfig { tradeoff: -0.1, ..Default::default() }.validate().is_err());
    }
}
