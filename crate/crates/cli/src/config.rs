//! Run configuration files and the resolution of plans and data.
//!
//! `--config` takes either a preset (a builtin name or a `.cfg` file with
//! `[networks.*]` tables) or a run file:
//!
//! ```toml
//! method = "semantic-alignment"
//! direction = "a2v"
//! scale = "compact"
//! presets = ["compact"]
//!
//! [train]
//! epochs = 20
//!
//! [data]
//! cache = ".cmkt/runs/preprocess-0123456789ab/cache"
//! # or: [data.synthetic] n_samples = 2000
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cmkt::dataset::{generate_synthetic, load_cache, split_dataset, DatasetSplit, SyntheticConfig};
use cmkt::evaluation::{config_hash, NoiseSweepConfig};
use cmkt::models::{presets::preset, PresetFile};
use cmkt::training::{Direction, Method, MethodPlan, Scale, SearchSpace, TrainOverrides};
use cmkt::xai::AuditConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Preprocessed cache directory, or a `preprocess` run directory.
    pub cache: Option<PathBuf>,
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub trials: Option<usize>,
    pub sampler: Option<String>,
    pub top_k: Option<usize>,
    pub space: Option<SearchSpace>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: Option<Method>,
    /// Methods of a noise sweep.
    pub methods: Vec<Method>,
    pub direction: Option<Direction>,
    pub scale: Option<Scale>,
    pub presets: Vec<String>,
    pub train: TrainOverrides,
    pub data: DataConfig,
    pub search: SearchConfig,
    pub noise: Option<NoiseSweepConfig>,
    pub audit: Option<AuditConfig>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Loads `arg` as a run file, a preset file or a builtin preset name.
    pub fn load(arg: &str) -> Result<Self> {
        let path = Path::new(arg);
        if !path.exists() {
            let p = preset(arg).with_context(|| format!("--config {arg}"))?;
            return Ok(RunConfig { presets: vec![p.name.clone()], ..Default::default() });
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        if let Ok(p) = PresetFile::parse(&text) {
            if !p.networks.is_empty() {
                return Ok(RunConfig { presets: vec![arg.to_string()], ..Default::default() });
            }
        }
        Self::parse(&text).with_context(|| format!("parsing run config {}", path.display()))
    }
}

/// Plan for `method`: explicit presets if any, else the builtin ones.
pub fn resolve_plan(method: Method, direction: Direction, scale: Scale, presets: &[String], overrides: &TrainOverrides) -> Result<MethodPlan> {
    let plan = if presets.is_empty() {
        MethodPlan::builtin(method, direction, scale, overrides)?
    } else {
        let files = presets.iter().map(|p| preset(p)).collect::<cmkt::Result<Vec<_>>>()?;
        MethodPlan::with_presets(method, direction, files, overrides)?
    };
    Ok(plan)
}

/// A loaded dataset and the hash identifying it.
pub struct LoadedData {
    pub split: DatasetSplit,
    pub data_hash: String,
}

fn cache_dir(p: &Path) -> PathBuf {
    let nested = p.join("cache");
    if nested.join("manifest.json").exists() {
        nested
    } else {
        p.to_path_buf()
    }
}

pub fn load_data(data: &DataConfig) -> Result<LoadedData> {
    if let Some(p) = &data.cache {
        let (split, manifest) = load_cache(&cache_dir(p))?;
        return Ok(LoadedData { split, data_hash: manifest.data_hash() });
    }
    if let Some(syn) = &data.synthetic {
        let samples = generate_synthetic(syn)?;
        let split = split_dataset(samples, (8, 1, 1), syn.seed)?;
        return Ok(LoadedData { split, data_hash: config_hash(syn)? });
    }
    bail!(cmkt::CmktError::MissingArtifact {
        path: PathBuf::from("<dataset>"),
        hint: "pass --data <cache dir from `cmkt preprocess`> or --synthetic <n>, or set [data] in --config".into(),
    })
}
