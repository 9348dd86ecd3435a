//! Trained models of every method behind one prediction interface.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::fit::column;
use super::mapping::{Direction, FslModel, SslModel};
use super::supervised::{ClassifierModel, FusionLevel, TwoBranchModel};
use crate::dataset::{stack_channels, stack_images, Modality, PairedSample};
use crate::error::{CmktError, Result};
use crate::models::{load_checkpoint, save_checkpoint, TrainableModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    VisualOnly,
    AudioOnly,
    SemanticAlignment,
    FslMapping,
    SslMapping,
    FusionData,
    FusionFeature,
    FusionDecision,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::VisualOnly,
        Method::AudioOnly,
        Method::SemanticAlignment,
        Method::FslMapping,
        Method::SslMapping,
        Method::FusionData,
        Method::FusionFeature,
        Method::FusionDecision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::VisualOnly => "visual-only",
            Method::AudioOnly => "audio-only",
            Method::SemanticAlignment => "semantic-alignment",
            Method::FslMapping => "fsl-mapping",
            Method::SslMapping => "ssl-mapping",
            Method::FusionData => "fusion-data",
            Method::FusionFeature => "fusion-feature",
            Method::FusionDecision => "fusion-decision",
        }
    }

    /// Whether `--direction` selects source and target.
    pub fn uses_direction(self) -> bool {
        matches!(self, Method::SemanticAlignment | Method::FslMapping | Method::SslMapping)
    }

    pub fn fusion_level(self) -> Option<FusionLevel> {
        match self {
            Method::FusionData => Some(FusionLevel::Data),
            Method::FusionFeature => Some(FusionLevel::Feature),
            Method::FusionDecision => Some(FusionLevel::Decision),
            _ => None,
        }
    }

    /// Modalities consumed at prediction time.
    pub fn prediction_modalities(self, direction: Direction) -> Vec<Modality> {
        match self {
            Method::VisualOnly => vec![Modality::Visual],
            Method::AudioOnly => vec![Modality::Audio],
            m if m.uses_direction() => vec![direction.target()],
            _ => vec![Modality::Visual, Modality::Audio],
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = CmktError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            let names: Vec<_> = Method::ALL.iter().map(|m| m.as_str()).collect();
            CmktError::InvalidArgument(format!("unknown method `{s}` ({})", names.join(", ")))
        })
    }
}

#[derive(Debug, Clone)]
pub enum TrainedModel {
    SingleModal { modality: Modality, model: ClassifierModel },
    /// Shared encoder and classifier; `target` is the prediction modality.
    SemanticAlignment { target: Modality, model: ClassifierModel },
    FslMapping(FslModel),
    SslMapping(SslModel),
    FusionData(ClassifierModel),
    FusionTwoBranch(TwoBranchModel),
}

/// Describes a saved [`TrainedModel`]; parts live in sibling directories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub method: Method,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modality: Option<Modality>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<Direction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    pub parts: Vec<String>,
}

impl TrainedModel {
    pub fn method(&self) -> Method {
        match self {
            TrainedModel::SingleModal { modality: Modality::Visual, .. } => Method::VisualOnly,
            TrainedModel::SingleModal { modality: Modality::Audio, .. } => Method::AudioOnly,
            TrainedModel::SemanticAlignment { .. } => Method::SemanticAlignment,
            TrainedModel::FslMapping(_) => Method::FslMapping,
            TrainedModel::SslMapping(_) => Method::SslMapping,
            TrainedModel::FusionData(_) => Method::FusionData,
            TrainedModel::FusionTwoBranch(m) => match m.level {
                FusionLevel::Feature => Method::FusionFeature,
                _ => Method::FusionDecision,
            },
        }
    }

    pub fn input_modalities(&self) -> Vec<Modality> {
        match self {
            TrainedModel::SingleModal { modality, .. } => vec![*modality],
            TrainedModel::SemanticAlignment { target, .. } => vec![*target],
            TrainedModel::FslMapping(m) => vec![m.direction.target()],
            TrainedModel::SslMapping(m) => vec![m.direction.target()],
            TrainedModel::FusionData(_) | TrainedModel::FusionTwoBranch(_) => vec![Modality::Visual, Modality::Audio],
        }
    }

    /// Same semantic-alignment model predicting from the other modality.
    pub fn with_target(self, target: Modality) -> Result<Self> {
        match self {
            TrainedModel::SemanticAlignment { model, .. } => Ok(TrainedModel::SemanticAlignment { target, model }),
            other => Err(CmktError::InvalidArgument(format!("{} has a fixed prediction modality", other.method()))),
        }
    }

    /// The encoder whose output space is the encoded space, if any.
    pub fn encoder(&self) -> Option<&TrainableModel> {
        match self {
            TrainedModel::SingleModal { model, .. } | TrainedModel::SemanticAlignment { model, .. } => Some(&model.encoder),
            TrainedModel::FusionData(model) => Some(&model.encoder),
            _ => None,
        }
    }

    /// Input tensors in the order [`predict_prepared`](Self::predict_prepared)
    /// expects. Kept separate so runtime measurements exclude stacking.
    pub fn prepare(&self, samples: &[PairedSample]) -> Vec<ArrayD<f64>> {
        match self {
            TrainedModel::FusionData(_) => vec![stack_channels(samples)],
            _ => self.input_modalities().into_iter().map(|m| stack_images(samples, m)).collect(),
        }
    }

    /// Defect probabilities from prepared inputs.
    pub fn predict_prepared(&self, inputs: &[ArrayD<f64>]) -> Result<Vec<f64>> {
        let want = if matches!(self, TrainedModel::FusionTwoBranch(_)) { 2 } else { 1 };
        if inputs.len() != want {
            return Err(CmktError::shape(format!("{want} input tensors"), format!("{}", inputs.len())));
        }
        let y = match self {
            TrainedModel::SingleModal { model, .. } | TrainedModel::SemanticAlignment { model, .. } | TrainedModel::FusionData(model) => {
                model.predict_images(&inputs[0])?
            }
            TrainedModel::FslMapping(m) => m.predict_images(&inputs[0])?,
            TrainedModel::SslMapping(m) => m.predict_images(&inputs[0])?,
            TrainedModel::FusionTwoBranch(m) => m.predict_images(&inputs[0], &inputs[1])?,
        };
        Ok(column(&y))
    }

    pub fn predict(&self, samples: &[PairedSample]) -> Result<Vec<f64>> {
        self.predict_prepared(&self.prepare(samples))
    }

    /// Predictor over single-modality image batches `[N, 1, H, W]`, as
    /// needed by image explanations. Fails for multi-input models.
    pub fn image_predictor(&self, modality: Modality) -> Result<impl Fn(&ArrayD<f64>) -> Result<Vec<f64>> + '_> {
        let ok = match self {
            TrainedModel::SemanticAlignment { .. } => true,
            TrainedModel::FusionData(_) | TrainedModel::FusionTwoBranch(_) => false,
            _ => self.input_modalities() == [modality],
        };
        if !ok {
            return Err(CmktError::InvalidArgument(format!("{} cannot predict from {modality} images alone", self.method())));
        }
        Ok(move |x: &ArrayD<f64>| -> Result<Vec<f64>> {
            match self {
                TrainedModel::SemanticAlignment { model, .. } | TrainedModel::SingleModal { model, .. } => Ok(column(&model.predict_images(x)?)),
                other => other.predict_prepared(std::slice::from_ref(x)),
            }
        })
    }

    fn parts(&self) -> Vec<(&'static str, &TrainableModel)> {
        match self {
            TrainedModel::SingleModal { model, .. } | TrainedModel::SemanticAlignment { model, .. } | TrainedModel::FusionData(model) => {
                vec![("encoder", &model.encoder), ("classifier", &model.classifier)]
            }
            TrainedModel::FslMapping(m) => vec![("source", &m.source), ("mapping", &m.mapping), ("head", &m.head)],
            TrainedModel::SslMapping(m) => {
                vec![("visual_ae", &m.visual_ae), ("audio_ae", &m.audio_ae), ("mapping", &m.mapping), ("head", &m.head)]
            }
            TrainedModel::FusionTwoBranch(m) => {
                vec![("visual_encoder", &m.visual_encoder), ("audio_encoder", &m.audio_encoder), ("head", &m.head)]
            }
        }
    }

    pub fn manifest(&self) -> ModelManifest {
        let (modality, direction, tag) = match self {
            TrainedModel::SingleModal { modality, .. } => (Some(*modality), None, None),
            TrainedModel::SemanticAlignment { target, .. } => (Some(*target), Some(Direction::with_target(*target)), None),
            TrainedModel::FslMapping(m) => (None, Some(m.direction), Some(m.hidden_tag.clone())),
            TrainedModel::SslMapping(m) => (None, Some(m.direction), Some(m.bottleneck_tag.clone())),
            _ => (None, None, None),
        };
        ModelManifest {
            method: self.method(),
            modality,
            direction,
            tag,
            parts: self.parts().iter().map(|(n, _)| n.to_string()).collect(),
        }
    }

    /// Writes `model.json` plus one checkpoint directory per part.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| CmktError::io(dir, e))?;
        for (name, m) in self.parts() {
            save_checkpoint(m, &dir.join(name))?;
        }
        let path = dir.join("model.json");
        fs::write(&path, serde_json::to_string_pretty(&self.manifest())?).map_err(|e| CmktError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        if !path.exists() {
            return Err(CmktError::MissingArtifact { path, hint: "run `cmkt train` to produce a model directory".into() });
        }
        let text = fs::read_to_string(&path).map_err(|e| CmktError::io(&path, e))?;
        let mf: ModelManifest = serde_json::from_str(&text)?;
        let part = |name: &str| load_checkpoint(&dir.join(name));
        let need = |o: Option<Direction>| o.ok_or_else(|| CmktError::Config(format!("{}: manifest lacks a direction", path.display())));
        let tag = |t: &Option<String>, default: &str| t.clone().unwrap_or_else(|| default.to_string());
        let classifier_model = || -> Result<ClassifierModel> { Ok(ClassifierModel { encoder: part("encoder")?, classifier: part("classifier")? }) };
        Ok(match mf.method {
            Method::VisualOnly => TrainedModel::SingleModal { modality: Modality::Visual, model: classifier_model()? },
            Method::AudioOnly => TrainedModel::SingleModal { modality: Modality::Audio, model: classifier_model()? },
            Method::SemanticAlignment => {
                let target = mf.modality.or(mf.direction.map(Direction::target)).unwrap_or(Modality::Visual);
                TrainedModel::SemanticAlignment { target, model: classifier_model()? }
            }
            Method::FslMapping => TrainedModel::FslMapping(FslModel {
                direction: need(mf.direction)?,
                hidden_tag: tag(&mf.tag, "hidden"),
                source: part("source")?,
                mapping: part("mapping")?,
                head: part("head")?,
            }),
            Method::SslMapping => TrainedModel::SslMapping(SslModel {
                direction: need(mf.direction)?,
                bottleneck_tag: tag(&mf.tag, "bottleneck"),
                visual_ae: part("visual_ae")?,
                audio_ae: part("audio_ae")?,
                mapping: part("mapping")?,
                head: part("head")?,
            }),
            Method::FusionData => TrainedModel::FusionData(classifier_model()?),
            Method::FusionFeature | Method::FusionDecision => TrainedModel::FusionTwoBranch(TwoBranchModel {
                level: mf.method.fusion_level().expect("fusion method"),
                visual_encoder: part("visual_encoder")?,
                audio_encoder: part("audio_encoder")?,
                head: part("head")?,
            }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
        assert!("cmkt".parse::<Method>().is_err());
    }

    #[test]
    fn prediction_modalities() {
        assert_eq!(Method::SemanticAlignment.prediction_modalities(Direction::A2v), vec![Modality::Visual]);
        assert_eq!(Method::FusionFeature.prediction_modalities(Direction::V2a).len(), 2);
    }
}
