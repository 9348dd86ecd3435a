use serde::{Deserialize, Serialize};

use crate::error::{CmktError, Result};
use crate::losses::{CcsaConfig, ClassWeights};
use crate::nn::AdamConfig;

/// Granularity of the two-step semantic-alignment update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternation {
    /// Classifier step then encoder step on every minibatch.
    #[default]
    PerBatch,
    /// A full classifier epoch, then a full encoder epoch.
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ccsa: CcsaConfig,
    pub adam: AdamConfig,
    pub alternate: Alternation,
    /// Record group MMDs every this many epochs (semantic alignment only).
    pub snapshot_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.0007322092,
            weight_decay: 0.0005568733,
            epochs: 1200,
            batch_size: 128,
            seed: 0,
            ccsa: CcsaConfig::default(),
            adam: AdamConfig::default(),
            alternate: Alternation::PerBatch,
            snapshot_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(CmktError::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(CmktError::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        if self.epochs == 0 {
            return Err(CmktError::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CmktError::Config("batch_size must be >= 1".into()));
        }
        if self.snapshot_every == Some(0) {
            return Err(CmktError::Config("snapshot_every must be >= 1".into()));
        }
        self.ccsa.validate()
    }

    pub fn with_overrides(mut self, o: &TrainOverrides) -> Self {
        macro_rules! set {
            ($($field:ident),*) => { $(if let Some(v) = o.$field { self.$field = v; })* };
        }
        set!(learning_rate, weight_decay, epochs, batch_size, seed, alternate);
        if let Some(v) = o.margin {
            self.ccsa.margin = v;
        }
        if let Some(v) = o.tradeoff {
            self.ccsa.tradeoff = v;
        }
        if let Some(v) = o.class_weights {
            self.ccsa.class_weights = v;
        }
        if o.snapshot_every.is_some() {
            self.snapshot_every = o.snapshot_every;
        }
        self
    }
}

/// Partial [`TrainConfig`] as written in preset and run files.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOverrides {
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub margin: Option<f64>,
    pub tradeoff: Option<f64>,
    pub class_weights: Option<ClassWeights>,
    pub alternate: Option<Alternation>,
    pub snapshot_every: Option<usize>,
}

impl TrainOverrides {
    /// `other` wins wherever it is set.
    pub fn merged(self, other: &TrainOverrides) -> TrainOverrides {
        TrainOverrides {
            learning_rate: other.learning_rate.or(self.learning_rate),
            weight_decay: other.weight_decay.or(self.weight_decay),
            epochs: other.epochs.or(self.epochs),
            batch_size: other.batch_size.or(self.batch_size),
            seed: other.seed.or(self.seed),
            margin: other.margin.or(self.margin),
            tradeoff: other.tradeoff.or(self.tradeoff),
            class_weights: other.class_weights.or(self.class_weights),
            alternate: other.alternate.or(self.alternate),
            snapshot_every: other.snapshot_every.or(self.snapshot_every),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.batch_size, 128);
        assert_eq!(c.epochs, 1200);
        assert_eq!((c.adam.beta1, c.adam.beta2, c.adam.eps), (0.9, 0.999, 1e-8));
    }

    #[test]
    fn zero_epochs_rejected() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn overrides_apply_and_merge() {
        let a = TrainOverrides { epochs: Some(5), margin: Some(2.0), ..Default::default() };
        let b = TrainOverrides { epochs: Some(7), ..Default::default() };
        let c = TrainConfig::default().with_overrides(&a.merged(&b));
        assert_eq!(c.epochs, 7);
        assert_eq!(c.ccsa.margin, 2.0);
        let parsed: TrainOverrides = toml::from_str("alternate = \"per-epoch\"\nlearning_rate = 0.1").unwrap();
        assert_eq!(parsed.alternate, Some(Alternation::PerEpoch));
        assert!(toml::from_str::<TrainOverrides>("learnign_rate = 0.1").is_err());
    }
}
