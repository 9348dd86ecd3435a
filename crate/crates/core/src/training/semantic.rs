//! Semantic alignment: a Siamese encoder and classifier shared by both
//! modalities, trained with the alternating classification / CCSA update.

use std::path::PathBuf;

use ndarray::{concatenate, s, Array2, ArrayD, Axis, IxDyn};
use serde::{Deserialize, Serialize};

use super::config::{Alternation, TrainConfig};
use super::fit::{as_column, check_finite, column, epoch_batches, gather, gather_labels, hits, EpochStats, Optimized, PhaseHistory};
use crate::dataset::{labels, stack_images, DatasetSplit, Modality, PairedSample};
use crate::diagnostics::{export_encodings, export_schedule, group_mmds, GroupMmds, Kernel};
use crate::error::{CmktError, Result};
use crate::losses::{ccsa_loss, contrastive_alignment, mean_classification_loss, weighted_bce_grad};
use crate::models::{as_rows, encode, TrainableModel};
use crate::nn::Mode;

/// One paired minibatch: row `i` of `visual` and `audio` share `labels[i]`.
#[derive(Debug, Clone)]
pub struct AlignmentBatch {
    pub visual: ArrayD<f64>,
    pub audio: ArrayD<f64>,
    pub labels: Vec<u8>,
}

impl AlignmentBatch {
    pub fn from_samples(samples: &[PairedSample]) -> Self {
        AlignmentBatch {
            visual: stack_images(samples, Modality::Visual),
            audio: stack_images(samples, Modality::Audio),
            labels: labels(samples),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn select(&self, idx: &[usize]) -> Self {
        AlignmentBatch {
            visual: gather(&self.visual, idx),
            audio: gather(&self.audio, idx),
            labels: gather_labels(&self.labels, idx),
        }
    }

    /// Visual rows first, then audio rows.
    fn stacked(&self) -> ArrayD<f64> {
        concatenate(Axis(0), &[self.visual.view(), self.audio.view()]).expect("same item shape")
    }
}

/// Loss values observed during one encoder step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    /// `L_SA + L_S`.
    pub l_csa: f64,
    pub l_c: f64,
    pub l_ccsa: f64,
    /// Correct predictions over both halves of the batch.
    pub correct: usize,
}

/// Group MMDs of validation encodings after `epoch` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdSnapshot {
    pub epoch: usize,
    pub mmds: GroupMmds,
}

/// Owns the shared encoder `G_e` and classifier `G_t` with one optimizer
/// each. The two update steps are exposed separately so callers can check
/// that each touches only its own network.
#[derive(Debug, Clone)]
pub struct AlignmentTrainer {
    encoder: Optimized,
    classifier: Optimized,
    cfg: TrainConfig,
}

impl AlignmentTrainer {
    pub fn new(encoder: TrainableModel, classifier: TrainableModel, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let d: usize = encoder.output_shape().iter().product();
        if classifier.input_shape() != [d] {
            return Err(CmktError::Config(format!(
                "classifier input {:?} does not match encoder output dimension {d}",
                classifier.input_shape()
            )));
        }
        if classifier.output_shape() != [1] {
            return Err(CmktError::Config(format!("classifier output {:?} is not [1]", classifier.output_shape())));
        }
        Ok(AlignmentTrainer {
            encoder: Optimized::new(encoder, cfg),
            classifier: Optimized::new(classifier, cfg),
            cfg: cfg.clone(),
        })
    }

    pub fn encoder(&self) -> &TrainableModel {
        &self.encoder.model
    }

    pub fn classifier(&self) -> &TrainableModel {
        &self.classifier.model
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.encoder.model.set_mode(mode);
        self.classifier.model.set_mode(mode);
    }

    pub fn into_parts(self) -> (TrainableModel, TrainableModel) {
        (self.encoder.model, self.classifier.model)
    }

    /// Classifier forward on the stacked embeddings: `(L_C, dL_C/dp, probs)`.
    fn classification(&mut self, e: &ArrayD<f64>, labels: &[u8]) -> Result<(f64, ArrayD<f64>, Vec<f64>)> {
        let b = labels.len();
        let p = column(&self.classifier.model.forward(e.clone())?);
        let w = self.cfg.ccsa.class_weights;
        let (lv, gv) = weighted_bce_grad(&p[..b], labels, w)?;
        let (la, ga) = weighted_bce_grad(&p[b..], labels, w)?;
        let grad: Vec<f64> = gv.iter().chain(&ga).map(|g| g / 2.0).collect();
        Ok((mean_classification_loss(lv, la), as_column(grad), p))
    }

    /// Classifier update on embeddings `e`; leaves the encoder untouched.
    fn classifier_update(&mut self, e: &ArrayD<f64>, labels: &[u8]) -> Result<f64> {
        self.classifier.model.zero_grad();
        let (l_c, grad, _) = self.classification(e, labels)?;
        self.classifier.model.backward_params(grad);
        self.classifier.step();
        self.classifier.model.zero_grad();
        Ok(l_c)
    }

    /// Step 1: update `G_t` on `L_C` with `G_e` held fixed. Returns `L_C`.
    pub fn step_classifier(&mut self, batch: &AlignmentBatch) -> Result<f64> {
        self.encoder.model.zero_grad();
        let e = self.encoder.model.forward(batch.stacked())?;
        self.encoder.model.zero_grad();
        self.classifier_update(&e, &batch.labels)
    }

    /// `L_CCSA` for `batch` given the output `e` of the encoder's most
    /// recent forward pass; accumulates the encoder's parameter gradients
    /// and discards the classifier's.
    fn ccsa_from(&mut self, e: ArrayD<f64>, batch: &AlignmentBatch) -> Result<StepLosses> {
        let b = batch.len();
        self.classifier.model.zero_grad();
        let (l_c, grad_p, p) = self.classification(&e, &batch.labels)?;
        let de_c = as_rows(self.classifier.model.backward(grad_p));
        self.classifier.model.zero_grad();

        let rows = as_rows(e);
        let m = self.cfg.ccsa.margin;
        let terms = contrastive_alignment(rows.slice(s![..b, ..]), &batch.labels, rows.slice(s![b.., ..]), &batch.labels, m)?;
        let gamma = self.cfg.ccsa.tradeoff;
        let de_pair: Array2<f64> = concatenate(Axis(0), &[terms.grad_visual.view(), terms.grad_audio.view()]).expect("same dim");
        let de = de_pair * (1.0 - gamma) + de_c * gamma;
        let mut shape = vec![2 * b];
        shape.extend_from_slice(self.encoder.model.output_shape());
        self.encoder.model.backward_params(de.into_shape_with_order(IxDyn(&shape)).expect("contiguous"));

        let labels2: Vec<u8> = batch.labels.iter().chain(&batch.labels).copied().collect();
        Ok(StepLosses {
            l_csa: terms.semantic_alignment + terms.separation,
            l_c,
            l_ccsa: ccsa_loss(terms.semantic_alignment, terms.separation, l_c, gamma)?,
            correct: hits(&p, &labels2),
        })
    }

    fn ccsa_backward(&mut self, batch: &AlignmentBatch) -> Result<StepLosses> {
        self.encoder.model.zero_grad();
        let e = self.encoder.model.forward(batch.stacked())?;
        self.ccsa_from(e, batch)
    }

    /// Step 1 then step 2 on one batch. Step 1 leaves `G_e` unchanged, so
    /// a single encoder forward pass serves both steps.
    pub fn step_both(&mut self, batch: &AlignmentBatch) -> Result<(f64, StepLosses)> {
        self.encoder.model.zero_grad();
        let e = self.encoder.model.forward(batch.stacked())?;
        let l_c1 = self.classifier_update(&e, &batch.labels)?;
        let out = self.ccsa_from(e, batch)?;
        self.encoder.step();
        self.encoder.model.zero_grad();
        Ok((l_c1, out))
    }

    /// Step 2: update `G_e` on `L_CCSA` with `G_t` held fixed.
    pub fn step_encoder(&mut self, batch: &AlignmentBatch) -> Result<StepLosses> {
        let out = self.ccsa_backward(batch)?;
        self.encoder.step();
        self.encoder.model.zero_grad();
        Ok(out)
    }

    /// `L_CCSA` on `batch` and its gradient with respect to the flattened
    /// encoder parameters, without updating anything.
    pub fn ccsa_gradient(&mut self, batch: &AlignmentBatch) -> Result<(f64, Vec<f64>)> {
        let out = self.ccsa_backward(batch)?;
        let g = self.encoder.model.flat_grads();
        self.encoder.model.zero_grad();
        Ok((out.l_ccsa, g))
    }

    /// Loads flat encoder parameters (for finite-difference checks).
    pub fn set_encoder_params(&mut self, values: &[f64]) -> Result<()> {
        self.encoder.model.set_flat_params(values)
    }
}

/// Output of [`train_semantic_alignment`].
#[derive(Debug, Clone)]
pub struct AlignmentRun {
    pub encoder: TrainableModel,
    pub classifier: TrainableModel,
    pub history: PhaseHistory,
    pub snapshots: Vec<MmdSnapshot>,
}

/// Optional diagnostics collected while training.
#[derive(Debug, Clone, Default)]
pub struct SnapshotOptions {
    pub kernel: Kernel,
    /// Also write validation encodings at each snapshot epoch.
    pub export_dir: Option<PathBuf>,
}

fn snapshot(encoder: &TrainableModel, val: &[PairedSample], epoch: usize, opts: &SnapshotOptions) -> Option<MmdSnapshot> {
    if let Some(dir) = &opts.export_dir {
        if let Err(e) = export_encodings(encoder, val, epoch, dir) {
            log::warn!("encoding export at epoch {epoch} failed: {e}");
        }
    }
    let y = labels(val);
    let enc = |m| encode(encoder, &stack_images(val, m), &y, m);
    match enc(Modality::Visual).and_then(|ev| Ok((ev, enc(Modality::Audio)?))).and_then(|(ev, ea)| group_mmds(&ev, &ea, opts.kernel)) {
        Ok(mmds) => Some(MmdSnapshot { epoch, mmds }),
        Err(e) => {
            log::warn!("MMD snapshot at epoch {epoch} skipped: {e}");
            None
        }
    }
}

/// Trains the shared encoder and classifier on paired training data. When
/// `cfg.snapshot_every` is set, group MMDs of the validation encodings are
/// logged after epoch 1 and every `snapshot_every` epochs.
pub fn train_semantic_alignment(
    split: &DatasetSplit,
    encoder: TrainableModel,
    classifier: TrainableModel,
    cfg: &TrainConfig,
    opts: &SnapshotOptions,
) -> Result<AlignmentRun> {
    if split.train.is_empty() {
        return Err(CmktError::Empty("semantic alignment: no training samples".into()));
    }
    let mut trainer = AlignmentTrainer::new(encoder, classifier, cfg)?;
    let data = AlignmentBatch::from_samples(&split.train);
    let n = data.len();
    let mut schedule = cfg.snapshot_every.map(|k| export_schedule(cfg.epochs, k)).unwrap_or_default();
    if cfg.snapshot_every.is_some() && schedule.first() != Some(&1) {
        schedule.insert(0, 1);
    }
    let mut history = PhaseHistory::new("semantic_alignment");
    let mut snapshots = Vec::new();
    trainer.set_mode(Mode::Train);
    for epoch in 0..cfg.epochs {
        let batches: Vec<AlignmentBatch> = epoch_batches(n, cfg.batch_size, cfg.seed, epoch).iter().map(|i| data.select(i)).collect();
        if cfg.alternate == Alternation::PerEpoch {
            for b in &batches {
                check_finite(trainer.step_classifier(b)?, epoch, "L_C")?;
            }
        }
        let (mut csa, mut lc, mut ccsa, mut correct) = (0.0, 0.0, 0.0, 0usize);
        for b in &batches {
            let st = if cfg.alternate == Alternation::PerBatch {
                let (l_c1, st) = trainer.step_both(b)?;
                check_finite(l_c1, epoch, "L_C")?;
                st
            } else {
                trainer.step_encoder(b)?
            };
            check_finite(st.l_ccsa, epoch, "L_CCSA")?;
            csa += st.l_csa;
            lc += st.l_c;
            ccsa += st.l_ccsa;
            correct += st.correct;
        }
        let k = batches.len() as f64;
        let mut stats = EpochStats::new(epoch, ccsa / k);
        stats.l_csa = Some(csa / k);
        stats.l_c = Some(lc / k);
        stats.l_ccsa = Some(ccsa / k);
        stats.train_accuracy = Some(correct as f64 / (2 * n) as f64);
        log::debug!("alignment epoch {epoch}: L_CSA {:.5} L_C {:.5} acc {:.4}", csa / k, lc / k, correct as f64 / (2 * n) as f64);
        history.epochs.push(stats);
        if schedule.contains(&(epoch + 1)) && !split.validation.is_empty() {
            trainer.set_mode(Mode::Eval);
            snapshots.extend(snapshot(trainer.encoder(), &split.validation, epoch + 1, opts));
            trainer.set_mode(Mode::Train);
        }
    }
    trainer.set_mode(Mode::Eval);
    let (encoder, classifier) = trainer.into_parts();
    Ok(AlignmentRun { encoder, classifier, history, snapshots })
}
