//! Method plans: which networks and training configs each pipeline uses,
//! resolved from presets, and a single entry point that trains any method.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{TrainConfig, TrainOverrides};
use super::fit::PhaseHistory;
use super::search::HyperParams;
use super::mapping::{logistic_head, train_fully_supervised_mapping, train_semi_supervised_mapping, Direction, FslPipeline, SslPipeline};
use super::semantic::{train_semantic_alignment, MmdSnapshot, SnapshotOptions};
use super::supervised::{train_fusion_data, train_fusion_two_branch, train_single_modal, FusionLevel};
use super::trained::{Method, TrainedModel};
use crate::dataset::{DatasetSplit, Modality};
use crate::error::{CmktError, Result};
use crate::models::presets::preset;
use crate::models::{build_model, ArchitectureSpec, PresetFile, TrainableModel};
use crate::util::mix_seed;

/// Which family of shipped presets to draw networks from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// Small networks sized for CPU experiments on synthetic data.
    #[default]
    Compact,
    /// The published architectures.
    Full,
}

/// Name of the pseudo-preset for the semi-supervised logistic head.
const LOGISTIC_HEAD: &str = "logistic_head";

pub fn preset_names(method: Method, scale: Scale) -> Vec<&'static str> {
    use Method::*;
    match (scale, method) {
        (Scale::Compact, VisualOnly | AudioOnly | SemanticAlignment) => vec!["compact"],
        (Scale::Compact, FslMapping) => vec!["compact_fsl_phase1", "compact_fsl_phase2", "compact_fsl_phase3"],
        (Scale::Compact, SslMapping) => vec!["compact_ssl_visual_ae", "compact_ssl_audio_ae", "compact_ssl_mapping", LOGISTIC_HEAD],
        (Scale::Compact, FusionData) => vec!["compact_fusion_data"],
        (Scale::Compact, FusionFeature) => vec!["compact_fusion_feature"],
        (Scale::Compact, FusionDecision) => vec!["compact_fusion_decision"],
        (Scale::Full, VisualOnly | AudioOnly | SemanticAlignment) => vec!["table4"],
        (Scale::Full, FslMapping) => vec!["tableA1_phase1", "tableA1_phase2", "tableA1_phase3"],
        (Scale::Full, SslMapping) => vec!["tableA2_visual_ae", "tableA2_audio_ae", "tableA2_mapping", LOGISTIC_HEAD],
        (Scale::Full, FusionData) => vec!["fusion_data"],
        (Scale::Full, FusionFeature) => vec!["fusion_feature"],
        (Scale::Full, FusionDecision) => vec!["fusion_decision"],
    }
}

fn logistic_head_preset(scale: Scale) -> PresetFile {
    let train = match scale {
        Scale::Compact => TrainOverrides { learning_rate: Some(0.01), weight_decay: Some(1e-3), epochs: Some(60), batch_size: Some(64), ..Default::default() },
        Scale::Full => TrainOverrides { learning_rate: Some(0.01), weight_decay: Some(1e-3), epochs: Some(150), ..Default::default() },
    };
    PresetFile { name: LOGISTIC_HEAD.into(), description: "dense + sigmoid on mapped features".into(), train, networks: Default::default() }
}

/// One training phase: its networks and its resolved config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePlan {
    pub preset: PresetFile,
    pub cfg: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodPlan {
    pub method: Method,
    pub direction: Direction,
    pub phases: Vec<PhasePlan>,
}

impl MethodPlan {
    /// Plan from explicit presets. Config precedence: defaults, then the
    /// preset's `[train]` table, then `overrides`.
    pub fn with_presets(method: Method, direction: Direction, presets: Vec<PresetFile>, overrides: &TrainOverrides) -> Result<Self> {
        let want = match method {
            Method::FslMapping => 3,
            Method::SslMapping => 4,
            _ => 1,
        };
        if presets.len() != want {
            return Err(CmktError::Config(format!("{method} needs {want} preset(s), got {}", presets.len())));
        }
        let phases = presets
            .into_iter()
            .map(|p| {
                let cfg = TrainConfig::default().with_overrides(&p.train).with_overrides(overrides);
                cfg.validate()?;
                Ok(PhasePlan { preset: p, cfg })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MethodPlan { method, direction, phases })
    }

    /// Plan from the shipped presets of `scale`.
    pub fn builtin(method: Method, direction: Direction, scale: Scale, overrides: &TrainOverrides) -> Result<Self> {
        let presets = preset_names(method, scale)
            .into_iter()
            .map(|n| if n == LOGISTIC_HEAD { Ok(logistic_head_preset(scale)) } else { preset(n) })
            .collect::<Result<Vec<_>>>()?;
        Self::with_presets(method, direction, presets, overrides)
    }

    /// Applies `overrides` on top of every phase config.
    pub fn override_all(&mut self, overrides: &TrainOverrides) -> Result<()> {
        for p in &mut self.phases {
            p.cfg = p.cfg.clone().with_overrides(overrides);
            p.cfg.validate()?;
        }
        Ok(())
    }

    /// Applies sampled hyperparameters: rates on every phase, and for
    /// encoder/classifier methods a generated architecture. The mapping
    /// pipelines keep their preset networks.
    pub fn with_hyperparams(&self, h: &HyperParams) -> Result<Self> {
        let mut out = self.clone();
        out.override_all(&TrainOverrides { learning_rate: Some(h.learning_rate), weight_decay: Some(h.weight_decay), ..Default::default() })?;
        let nets = &mut out.phases[0].preset.networks;
        let flat = |s: &ArchitectureSpec| -> Result<usize> { Ok(s.output_shape()?.iter().product()) };
        match self.method {
            Method::VisualOnly | Method::AudioOnly | Method::SemanticAlignment | Method::FusionData => {
                let channels = if self.method == Method::FusionData { 2 } else { 1 };
                let enc = h.encoder_spec(channels, crate::dataset::SIDE);
                let d = flat(&enc)?;
                nets.insert("encoder".into(), enc);
                nets.insert("classifier".into(), h.classifier_spec(d));
            }
            Method::FusionFeature | Method::FusionDecision => {
                let enc = h.encoder_spec(1, crate::dataset::SIDE);
                let d = 2 * flat(&enc)?;
                nets.insert("visual_encoder".into(), enc.clone());
                nets.insert("audio_encoder".into(), enc);
                let head = if self.method == Method::FusionFeature {
                    h.classifier_spec(d)
                } else {
                    ArchitectureSpec::new(vec![d], vec![crate::models::layer::dense(1), crate::models::layer::act("sigmoid")])
                };
                nets.insert("head".into(), head);
            }
            Method::FslMapping | Method::SslMapping => {}
        }
        Ok(out)
    }

    /// Config of the phase that dominates training (the first one).
    pub fn primary_cfg(&self) -> &TrainConfig {
        &self.phases[0].cfg
    }

    pub fn total_epochs(&self) -> usize {
        self.phases.iter().map(|p| p.cfg.epochs).sum()
    }
}

/// Result of [`train_method`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TrainedModel,
    pub histories: Vec<PhaseHistory>,
    pub snapshots: Vec<MmdSnapshot>,
    pub training_runtime_s: f64,
}

fn net(phase: &PhasePlan, role: &str, salt: u64) -> Result<TrainableModel> {
    build_model(phase.preset.network(role)?, mix_seed(phase.cfg.seed, salt))
}

/// Rebuilds an SSL mapping preset so it maps `dt -> ds`.
fn mapping_spec(spec: &ArchitectureSpec, dt: usize, ds: usize) -> Result<ArchitectureSpec> {
    if spec.input_shape == [dt] && spec.output_shape()? == [ds] {
        return Ok(spec.clone());
    }
    spec.clone().with_input_shape(vec![dt]).with_final_dense(ds)
}

/// Trains `plan` on `split.train`. The wall-clock time of the whole
/// pipeline is recorded as the training runtime.
pub fn train_method(plan: &MethodPlan, split: &DatasetSplit, opts: &SnapshotOptions) -> Result<TrainOutcome> {
    if split.train.is_empty() {
        return Err(CmktError::Empty(format!("{}: empty training split", plan.method)));
    }
    let start = Instant::now();
    let p0 = &plan.phases[0];
    let mut snapshots = Vec::new();
    let (model, histories) = match plan.method {
        Method::VisualOnly | Method::AudioOnly => {
            let m = if plan.method == Method::VisualOnly { Modality::Visual } else { Modality::Audio };
            let (model, h) = train_single_modal(split, m, net(p0, "encoder", 1)?, net(p0, "classifier", 2)?, &p0.cfg)?;
            (TrainedModel::SingleModal { modality: m, model }, vec![h])
        }
        Method::SemanticAlignment => {
            let run = train_semantic_alignment(split, net(p0, "encoder", 1)?, net(p0, "classifier", 2)?, &p0.cfg, opts)?;
            snapshots = run.snapshots;
            let model = super::supervised::ClassifierModel { encoder: run.encoder, classifier: run.classifier };
            (TrainedModel::SemanticAlignment { target: plan.direction.target(), model }, vec![run.history])
        }
        Method::FslMapping => {
            let [a, b, c] = [&plan.phases[0], &plan.phases[1], &plan.phases[2]];
            let pipeline = FslPipeline::new(
                plan.direction,
                net(a, "model", 1)?,
                net(b, "model", 2)?,
                net(c, "model", 3)?,
                "hidden",
                [a.cfg.clone(), b.cfg.clone(), c.cfg.clone()],
            )?;
            let (m, h) = train_fully_supervised_mapping(split, pipeline)?;
            (TrainedModel::FslMapping(m), h)
        }
        Method::SslMapping => {
            let [va, aa, mp, hd] = [&plan.phases[0], &plan.phases[1], &plan.phases[2], &plan.phases[3]];
            let (visual_ae, audio_ae) = (net(va, "model", 1)?, net(aa, "model", 2)?);
            let code_dim = |m: &TrainableModel| m.extract_hidden("bottleneck").map(|h| h.dim());
            let (dv, da) = (code_dim(&visual_ae)?, code_dim(&audio_ae)?);
            let (ds, dt) = match plan.direction {
                Direction::V2a => (dv, da),
                Direction::A2v => (da, dv),
            };
            let mapping = build_model(&mapping_spec(mp.preset.network("model")?, dt, ds)?, mix_seed(mp.cfg.seed, 3))?;
            let head = build_model(&logistic_head(ds), mix_seed(hd.cfg.seed, 4))?;
            let cfgs = [va.cfg.clone(), aa.cfg.clone(), mp.cfg.clone(), hd.cfg.clone()];
            let pipeline = SslPipeline::new(plan.direction, visual_ae, audio_ae, mapping, head, "bottleneck", cfgs)?;
            let (m, h) = train_semi_supervised_mapping(split, pipeline)?;
            (TrainedModel::SslMapping(m), h)
        }
        Method::FusionData => {
            let (model, h) = train_fusion_data(split, net(p0, "encoder", 1)?, net(p0, "classifier", 2)?, &p0.cfg)?;
            (TrainedModel::FusionData(model), vec![h])
        }
        Method::FusionFeature | Method::FusionDecision => {
            let level = plan.method.fusion_level().expect("fusion");
            debug_assert_ne!(level, FusionLevel::Data);
            let (model, h) = train_fusion_two_branch(
                split,
                level,
                net(p0, "visual_encoder", 1)?,
                net(p0, "audio_encoder", 2)?,
                net(p0, "head", 3)?,
                &p0.cfg,
            )?;
            (TrainedModel::FusionTwoBranch(model), vec![h])
        }
    };
    Ok(TrainOutcome { model, histories, snapshots, training_runtime_s: start.elapsed().as_secs_f64() })
}

/// Untrained model of `plan` with the same structure as a trained one.
/// Runtime measurements do not depend on weights.
pub fn untrained_model(plan: &MethodPlan) -> Result<TrainedModel> {
    let mut short = plan.clone();
    short.override_all(&TrainOverrides { epochs: Some(1), ..Default::default() })?;
    let p0 = &short.phases[0];
    use super::supervised::{ClassifierModel, TwoBranchModel};
    Ok(match plan.method {
        Method::VisualOnly | Method::AudioOnly | Method::SemanticAlignment | Method::FusionData => {
            let model = ClassifierModel { encoder: net(p0, "encoder", 1)?, classifier: net(p0, "classifier", 2)? };
            match plan.method {
                Method::VisualOnly => TrainedModel::SingleModal { modality: Modality::Visual, model },
                Method::AudioOnly => TrainedModel::SingleModal { modality: Modality::Audio, model },
                Method::SemanticAlignment => TrainedModel::SemanticAlignment { target: plan.direction.target(), model },
                _ => TrainedModel::FusionData(model),
            }
        }
        Method::FusionFeature | Method::FusionDecision => TrainedModel::FusionTwoBranch(TwoBranchModel {
            level: plan.method.fusion_level().expect("fusion"),
            visual_encoder: net(p0, "visual_encoder", 1)?,
            audio_encoder: net(p0, "audio_encoder", 2)?,
            head: net(p0, "head", 3)?,
        }),
        Method::FslMapping | Method::SslMapping => {
            return Err(CmktError::InvalidArgument(format!("{}: untrained models need the full pipeline", plan.method)));
        }
    })
}
