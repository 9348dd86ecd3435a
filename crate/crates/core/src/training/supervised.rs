//! End-to-end supervised pipelines: single-modal and the three fusion levels.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, ArrayD, Axis};
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::fit::{fit_classifier, infer_chunked, Chain, Optimized, PhaseHistory, TwoBranch, INFER_CHUNK};
use crate::dataset::{labels, stack_channels, stack_images, DatasetSplit, Modality};
use crate::error::{CmktError, Result};
use crate::models::{as_rows, LayerKind, TrainableModel};

/// Encoder followed by a classifier.
#[derive(Debug, Clone)]
pub struct ClassifierModel {
    pub encoder: TrainableModel,
    pub classifier: TrainableModel,
}

impl ClassifierModel {
    pub fn predict_images(&self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let e = infer_chunked(&self.encoder, x, INFER_CHUNK)?;
        infer_chunked(&self.classifier, &e, INFER_CHUNK)
    }
}

fn check_pair(encoder: &TrainableModel, classifier: &TrainableModel) -> Result<()> {
    let d: usize = encoder.output_shape().iter().product();
    if classifier.input_shape() != [d] || classifier.output_shape() != [1] {
        return Err(CmktError::Config(format!(
            "classifier must map [{d}] -> [1], got {:?} -> {:?}",
            classifier.input_shape(),
            classifier.output_shape()
        )));
    }
    Ok(())
}

fn fit_pair(
    encoder: TrainableModel,
    classifier: TrainableModel,
    x: ArrayD<f64>,
    y: &[u8],
    cfg: &TrainConfig,
    phase: &str,
) -> Result<(ClassifierModel, PhaseHistory)> {
    check_pair(&encoder, &classifier)?;
    let mut net = Chain(vec![Optimized::new(encoder, cfg), Optimized::new(classifier, cfg)]);
    let h = fit_classifier(&mut net, &[x], y, cfg, phase)?;
    let classifier = net.0.pop().expect("two models").model;
    let encoder = net.0.pop().expect("two models").model;
    Ok((ClassifierModel { encoder, classifier }, h))
}

/// Trains encoder and classifier end to end on one modality.
pub fn train_single_modal(
    split: &DatasetSplit,
    modality: Modality,
    encoder: TrainableModel,
    classifier: TrainableModel,
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, PhaseHistory)> {
    let x = stack_images(&split.train, modality);
    fit_pair(encoder, classifier, x, &labels(&split.train), cfg, &format!("{modality}_only"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionLevel {
    /// Both images stacked as a 2-channel input.
    Data,
    /// Per-modality encoders, concatenated features, hidden dense layers.
    Feature,
    /// Per-modality encoders, concatenated features, one linear unit.
    Decision,
}

impl FusionLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionLevel::Data => "data",
            FusionLevel::Feature => "feature",
            FusionLevel::Decision => "decision",
        }
    }
}

impl fmt::Display for FusionLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionLevel {
    type Err = CmktError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "data" => Ok(FusionLevel::Data),
            "feature" => Ok(FusionLevel::Feature),
            "decision" => Ok(FusionLevel::Decision),
            other => Err(CmktError::InvalidArgument(format!("unknown fusion level `{other}` (data, feature, decision)"))),
        }
    }
}

/// Feature- or decision-level fusion network.
#[derive(Debug, Clone)]
pub struct TwoBranchModel {
    pub level: FusionLevel,
    pub visual_encoder: TrainableModel,
    pub audio_encoder: TrainableModel,
    pub head: TrainableModel,
}

impl TwoBranchModel {
    /// Width of the concatenated representation.
    pub fn fused_dim(&self) -> usize {
        self.visual_encoder.output_shape().iter().product::<usize>() + self.audio_encoder.output_shape().iter().product::<usize>()
    }

    pub fn predict_images(&self, visual: &ArrayD<f64>, audio: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let fv = as_rows(infer_chunked(&self.visual_encoder, visual, INFER_CHUNK)?);
        let fa = as_rows(infer_chunked(&self.audio_encoder, audio, INFER_CHUNK)?);
        if fv.nrows() != fa.nrows() {
            return Err(CmktError::shape(format!("{} audio rows", fv.nrows()), format!("{}", fa.nrows())));
        }
        let cat = concatenate(Axis(1), &[fv.view(), fa.view()]).expect("same rows");
        infer_chunked(&self.head, &cat.into_dyn(), INFER_CHUNK)
    }
}

/// Data-level fusion: one encoder on `[N, 2, 80, 80]` inputs.
pub fn train_fusion_data(
    split: &DatasetSplit,
    encoder: TrainableModel,
    classifier: TrainableModel,
    cfg: &TrainConfig,
) -> Result<(ClassifierModel, PhaseHistory)> {
    if encoder.input_shape().first() != Some(&2) {
        return Err(CmktError::Config(format!("data-level fusion needs a 2-channel input, got {:?}", encoder.input_shape())));
    }
    fit_pair(encoder, classifier, stack_channels(&split.train), &labels(&split.train), cfg, "fusion_data")
}

/// Feature- or decision-level fusion.
pub fn train_fusion_two_branch(
    split: &DatasetSplit,
    level: FusionLevel,
    visual_encoder: TrainableModel,
    audio_encoder: TrainableModel,
    head: TrainableModel,
    cfg: &TrainConfig,
) -> Result<(TwoBranchModel, PhaseHistory)> {
    let dense = head.spec().layers.iter().filter(|l| matches!(l.kind, LayerKind::Dense { .. })).count();
    match level {
        FusionLevel::Data => {
            return Err(CmktError::InvalidArgument("data-level fusion has a single branch".into()));
        }
        FusionLevel::Decision if dense != 1 => {
            return Err(CmktError::Config(format!("decision-level head must be a single dense layer, has {dense}")));
        }
        _ => {}
    }
    let mut net = TwoBranch::new(Optimized::new(visual_encoder, cfg), Optimized::new(audio_encoder, cfg), Optimized::new(head, cfg))?;
    let inputs = [stack_images(&split.train, Modality::Visual), stack_images(&split.train, Modality::Audio)];
    let h = fit_classifier(&mut net, &inputs, &labels(&split.train), cfg, &format!("fusion_{level}"))?;
    let model = TwoBranchModel { level, visual_encoder: net.left.model, audio_encoder: net.right.model, head: net.head.model };
    Ok((model, h))
}
