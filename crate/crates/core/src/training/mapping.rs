//! Cross-modal feature mapping pipelines. Both are three-phase state
//! machines; running a phase before its predecessor is an error.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::fit::{fit_classifier, fit_regression, infer_chunked, Chain, Optimized, PhaseHistory, INFER_CHUNK};
use crate::dataset::{labels, stack_images, DatasetSplit, Modality, PairedSample};
use crate::error::{CmktError, Result};
use crate::models::{layer, ArchitectureSpec, TrainableModel};

/// Knowledge flows from the source modality (used only in training) to the
/// target modality (used for prediction).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Visual source, audio target.
    #[default]
    V2a,
    /// Audio source, visual target.
    A2v,
}

impl Direction {
    pub fn source(self) -> Modality {
        match self {
            Direction::V2a => Modality::Visual,
            Direction::A2v => Modality::Audio,
        }
    }

    pub fn target(self) -> Modality {
        self.source().other()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::V2a => "v2a",
            Direction::A2v => "a2v",
        }
    }

    /// Direction whose target is `m`.
    pub fn with_target(m: Modality) -> Self {
        match m {
            Modality::Audio => Direction::V2a,
            Modality::Visual => Direction::A2v,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = CmktError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "v2a" => Ok(Direction::V2a),
            "a2v" => Ok(Direction::A2v),
            other => Err(CmktError::InvalidArgument(format!("unknown direction `{other}` (v2a, a2v)"))),
        }
    }
}

fn require_phase(done: usize, phase: usize) -> Result<()> {
    if done + 1 == phase {
        Ok(())
    } else if done >= phase {
        Err(CmktError::PhaseOrder(format!("phase {phase} has already run")))
    } else {
        Err(CmktError::PhaseOrder(format!("phase {phase} requires phase {} to have completed", phase - 1)))
    }
}

fn nonempty(samples: &[PairedSample], what: &str) -> Result<()> {
    if samples.is_empty() {
        Err(CmktError::Empty(format!("{what}: no training samples")))
    } else {
        Ok(())
    }
}

fn flat_dim(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Fully supervised mapping: source classifier, target-to-hidden mapping,
/// classifier head on the mapped features.
#[derive(Debug, Clone)]
pub struct FslModel {
    pub direction: Direction,
    pub hidden_tag: String,
    pub source: TrainableModel,
    pub mapping: TrainableModel,
    pub head: TrainableModel,
}

impl FslModel {
    /// Probabilities from target-modality images `[N, 1, 80, 80]`.
    pub fn predict_images(&self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let f = infer_chunked(&self.mapping, x, INFER_CHUNK)?;
        infer_chunked(&self.head, &f, INFER_CHUNK)
    }
}

#[derive(Debug, Clone)]
pub struct FslPipeline {
    direction: Direction,
    hidden_tag: String,
    cfgs: [TrainConfig; 3],
    source: TrainableModel,
    mapping: TrainableModel,
    head: TrainableModel,
    done: usize,
    pub histories: Vec<PhaseHistory>,
}

impl FslPipeline {
    /// `source` must expose `hidden_tag`; its hidden width has to match the
    /// mapping output and the head input.
    pub fn new(
        direction: Direction,
        source: TrainableModel,
        mapping: TrainableModel,
        head: TrainableModel,
        hidden_tag: &str,
        cfgs: [TrainConfig; 3],
    ) -> Result<Self> {
        for c in &cfgs {
            c.validate()?;
        }
        let h = source.extract_hidden(hidden_tag)?.dim();
        if flat_dim(mapping.output_shape()) != h || mapping.output_shape().len() != 1 {
            return Err(CmktError::Config(format!(
                "mapping output {:?} does not match hidden feature dimension {h}",
                mapping.output_shape()
            )));
        }
        if head.input_shape() != [h] {
            return Err(CmktError::Config(format!("head input {:?} does not match hidden dimension {h}", head.input_shape())));
        }
        Ok(FslPipeline { direction, hidden_tag: hidden_tag.into(), cfgs, source, mapping, head, done: 0, histories: Vec::new() })
    }

    pub fn phases_done(&self) -> usize {
        self.done
    }

    pub fn source(&self) -> &TrainableModel {
        &self.source
    }

    pub fn mapping(&self) -> &TrainableModel {
        &self.mapping
    }

    /// Trains the source-modality classifier.
    pub fn run_phase1(&mut self, train: &[PairedSample]) -> Result<()> {
        require_phase(self.done, 1)?;
        nonempty(train, "phase 1")?;
        let x = stack_images(train, self.direction.source());
        let mut net = Chain(vec![Optimized::new(self.source.clone(), &self.cfgs[0])]);
        let h = fit_classifier(&mut net, &[x], &labels(train), &self.cfgs[0], "fsl_phase1")?;
        self.source = net.0.remove(0).model;
        self.histories.push(h);
        self.done = 1;
        Ok(())
    }

    /// Hidden features `F_h` of the frozen source classifier.
    pub fn hidden_features(&self, samples: &[PairedSample]) -> Result<ArrayD<f64>> {
        let x = stack_images(samples, self.direction.source());
        Ok(self.source.extract_hidden(&self.hidden_tag)?.apply(&x)?.into_dyn())
    }

    /// Regresses target-modality inputs onto `F_h`.
    pub fn run_phase2(&mut self, train: &[PairedSample]) -> Result<()> {
        require_phase(self.done, 2)?;
        nonempty(train, "phase 2")?;
        let fh = self.hidden_features(train)?;
        let x = stack_images(train, self.direction.target());
        let mut opt = Optimized::new(self.mapping.clone(), &self.cfgs[1]);
        let h = fit_regression(&mut opt, &x, &fh, &self.cfgs[1], "fsl_phase2")?;
        self.mapping = opt.model;
        self.histories.push(h);
        self.done = 2;
        Ok(())
    }

    /// Trains the head on frozen mapping outputs.
    pub fn run_phase3(&mut self, train: &[PairedSample]) -> Result<()> {
        require_phase(self.done, 3)?;
        nonempty(train, "phase 3")?;
        let f = infer_chunked(&self.mapping, &stack_images(train, self.direction.target()), INFER_CHUNK)?;
        let mut net = Chain(vec![Optimized::new(self.head.clone(), &self.cfgs[2])]);
        let h = fit_classifier(&mut net, &[f], &labels(train), &self.cfgs[2], "fsl_phase3")?;
        self.head = net.0.remove(0).model;
        self.histories.push(h);
        self.done = 3;
        Ok(())
    }

    pub fn finish(self) -> Result<(FslModel, Vec<PhaseHistory>)> {
        if self.done != 3 {
            return Err(CmktError::PhaseOrder(format!("pipeline finished after {} of 3 phases", self.done)));
        }
        let model = FslModel { direction: self.direction, hidden_tag: self.hidden_tag, source: self.source, mapping: self.mapping, head: self.head };
        Ok((model, self.histories))
    }
}

pub fn train_fully_supervised_mapping(split: &DatasetSplit, pipeline: FslPipeline) -> Result<(FslModel, Vec<PhaseHistory>)> {
    let mut p = pipeline;
    p.run_phase1(&split.train)?;
    p.run_phase2(&split.train)?;
    p.run_phase3(&split.train)?;
    p.finish()
}

/// Semi-supervised mapping: two autoencoders, a bottleneck mapping from the
/// target code to the source code, and a logistic head.
#[derive(Debug, Clone)]
pub struct SslModel {
    pub direction: Direction,
    pub bottleneck_tag: String,
    pub visual_ae: TrainableModel,
    pub audio_ae: TrainableModel,
    pub mapping: TrainableModel,
    pub head: TrainableModel,
}

impl SslModel {
    fn ae(&self, m: Modality) -> &TrainableModel {
        match m {
            Modality::Visual => &self.visual_ae,
            Modality::Audio => &self.audio_ae,
        }
    }

    /// Probabilities from target-modality images `[N, 1, 80, 80]`.
    pub fn predict_images(&self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        let code = self.ae(self.direction.target()).extract_hidden(&self.bottleneck_tag)?.apply(x)?.into_dyn();
        let f = infer_chunked(&self.mapping, &code, INFER_CHUNK)?;
        infer_chunked(&self.head, &f, INFER_CHUNK)
    }
}

/// Single dense unit with a sigmoid: logistic regression on `dim` inputs.
pub fn logistic_head(dim: usize) -> ArchitectureSpec {
    ArchitectureSpec::new(vec![dim], vec![layer::dense(1), layer::act("sigmoid")])
}

#[derive(Debug, Clone)]
pub struct SslPipeline {
    direction: Direction,
    bottleneck_tag: String,
    /// Visual AE, audio AE, mapping, head.
    cfgs: [TrainConfig; 4],
    visual_ae: TrainableModel,
    audio_ae: TrainableModel,
    mapping: TrainableModel,
    head: TrainableModel,
    done: usize,
    pub histories: Vec<PhaseHistory>,
}

impl SslPipeline {
    pub fn new(
        direction: Direction,
        visual_ae: TrainableModel,
        audio_ae: TrainableModel,
        mapping: TrainableModel,
        head: TrainableModel,
        bottleneck_tag: &str,
        cfgs: [TrainConfig; 4],
    ) -> Result<Self> {
        for c in &cfgs {
            c.validate()?;
        }
        for ae in [&visual_ae, &audio_ae] {
            if ae.input_shape() != ae.output_shape() {
                return Err(CmktError::Config(format!(
                    "autoencoder output {:?} differs from its input {:?}",
                    ae.output_shape(),
                    ae.input_shape()
                )));
            }
        }
        let dim = |m: Modality| -> Result<usize> {
            let ae = if m == Modality::Visual { &visual_ae } else { &audio_ae };
            Ok(ae.extract_hidden(bottleneck_tag)?.dim())
        };
        let (ds, dt) = (dim(direction.source())?, dim(direction.target())?);
        if mapping.input_shape() != [dt] || mapping.output_shape() != [ds] {
            return Err(CmktError::Config(format!(
                "mapping must be {dt} -> {ds} for {direction}, got {:?} -> {:?}",
                mapping.input_shape(),
                mapping.output_shape()
            )));
        }
        if head.input_shape() != [ds] || head.output_shape() != [1] {
            return Err(CmktError::Config(format!("head must be {ds} -> 1, got {:?} -> {:?}", head.input_shape(), head.output_shape())));
        }
        Ok(SslPipeline {
            direction,
            bottleneck_tag: bottleneck_tag.into(),
            cfgs,
            visual_ae,
            audio_ae,
            mapping,
            head,
            done: 0,
            histories: Vec::new(),
        })
    }

    pub fn phases_done(&self) -> usize {
        self.done
    }

    pub fn autoencoder(&self, m: Modality) -> &TrainableModel {
        match m {
            Modality::Visual => &self.visual_ae,
            Modality::Audio => &self.audio_ae,
        }
    }

    pub fn mapping(&self) -> &TrainableModel {
        &self.mapping
    }

    /// Trains both autoencoders on reconstruction.
    pub fn run_phase1(&mut self, train: &[PairedSample]) -> Result<()> {
        require_phase(self.done, 1)?;
        nonempty(train, "phase 1")?;
        for (m, cfg) in [(Modality::Visual, &self.cfgs[0]), (Modality::Audio, &self.cfgs[1])] {
            let x = stack_images(train, m);
            let ae = if m == Modality::Visual { &mut self.visual_ae } else { &mut self.audio_ae };
            let mut opt = Optimized::new(ae.clone(), cfg);
            let h = fit_regression(&mut opt, &x, &x, cfg, &format!("ssl_{m}_autoencoder"))?;
            *ae = opt.model;
            self.histories.push(h);
        }
        self.done = 1;
        Ok(())
    }

    pub fn code(&self, samples: &[PairedSample], m: Modality) -> Result<ArrayD<f64>> {
        let x = stack_images(samples, m);
        Ok(self.autoencoder(m).extract_hidden(&self.bottleneck_tag)?.apply(&x)?.into_dyn())
    }

    /// Maps the target bottleneck onto the source bottleneck.
    pub fn run_phase2(&mut self, train: &[PairedSample]) -> Result<()> {
        require_phase(self.done, 2)?;
        nonempty(train, "phase 2")?;
        let ft = self.code(train, self.direction.target())?;
        let fs = self.code(train, self.direction.source())?;
        let mut opt = Optimized::new(self.mapping.clone(), &self.cfgs[2]);
        let h = fit_regression(&mut opt, &ft, &fs, &self.cfgs[2], "ssl_mapping")?;
        self.mapping = opt.model;
        self.histories.push(h);
        self.done = 2;
        Ok(())
    }

    /// Trains the logistic head on mapped features with weight decay.
    pub fn run_phase3(&mut self, train: &[PairedSample]) -> Result<()> {
        require_phase(self.done, 3)?;
        nonempty(train, "phase 3")?;
        let f = infer_chunked(&self.mapping, &self.code(train, self.direction.target())?, INFER_CHUNK)?;
        let mut net = Chain(vec![Optimized::new(self.head.clone(), &self.cfgs[3])]);
        let h = fit_classifier(&mut net, &[f], &labels(train), &self.cfgs[3], "ssl_head")?;
        self.head = net.0.remove(0).model;
        self.histories.push(h);
        self.done = 3;
        Ok(())
    }

    pub fn finish(self) -> Result<(SslModel, Vec<PhaseHistory>)> {
        if self.done != 3 {
            return Err(CmktError::PhaseOrder(format!("pipeline finished after {} of 3 phases", self.done)));
        }
        let model = SslModel {
            direction: self.direction,
            bottleneck_tag: self.bottleneck_tag,
            visual_ae: self.visual_ae,
            audio_ae: self.audio_ae,
            mapping: self.mapping,
            head: self.head,
        };
        Ok((model, self.histories))
    }
}

pub fn train_semi_supervised_mapping(split: &DatasetSplit, pipeline: SslPipeline) -> Result<(SslModel, Vec<PhaseHistory>)> {
    let mut p = pipeline;
    p.run_phase1(&split.train)?;
    p.run_phase2(&split.train)?;
    p.run_phase3(&split.train)?;
    p.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn direction_roles() {
        assert_eq!(Direction::V2a.source(), Modality::Visual);
        assert_eq!(Direction::V2a.target(), Modality::Audio);
        assert_eq!(Direction::with_target(Modality::Visual), Direction::A2v);
        assert_eq!("A2V".parse::<Direction>().unwrap(), Direction::A2v);
        assert!("x".parse::<Direction>().is_err());
    }

    #[test]
    fn phase_order_messages() {
        assert!(require_phase(0, 1).is_ok());
        assert!(matches!(require_phase(0, 2), Err(CmktError::PhaseOrder(_))));
        assert!(matches!(require_phase(2, 2), Err(CmktError::PhaseOrder(_))));
    }
}
