//! Shipped architecture presets and the preset file format.
//!
//! A preset file is TOML with a `name`, an optional `description`, an
//! optional `[train]` table of training overrides and one
//! `[networks.<role>]` table per network.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spec::ArchitectureSpec;
use crate::error::{CmktError, Result};
use crate::training::TrainOverrides;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetFile {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub train: TrainOverrides,
    #[serde(default)]
    pub networks: BTreeMap<String, ArchitectureSpec>,
}

macro_rules! builtin {
    ($($name:literal),* $(,)?) => {
        const BUILTIN: &[(&str, &str)] = &[
            $(($name, include_str!(concat!("../../presets/", $name, ".cfg")))),*
        ];
    };
}

builtin!(
    "table4",
    "tableA1_phase1",
    "tableA1_phase1_h134",
    "tableA1_phase2",
    "tableA1_phase3",
    "tableA2_visual_ae",
    "tableA2_audio_ae",
    "tableA2_audio_ae_128x12",
    "tableA2_mapping",
    "fusion_data",
    "fusion_feature",
    "fusion_decision",
    "compact",
    "compact_fusion_data",
    "compact_fusion_feature",
    "compact_fusion_decision",
    "compact_fsl_phase1",
    "compact_fsl_phase2",
    "compact_fsl_phase3",
    "compact_ssl_visual_ae",
    "compact_ssl_audio_ae",
    "compact_ssl_mapping",
);

pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

impl PresetFile {
    pub fn parse(text: &str) -> Result<Self> {
        let p: PresetFile = toml::from_str(text)?;
        for (role, spec) in &p.networks {
            spec.output_shape()
                .map_err(|e| CmktError::Config(format!("network `{role}`: {e}")))?;
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CmktError::io(path, e))?;
        let mut p = Self::parse(&text)?;
        if p.name.is_empty() {
            p.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        }
        Ok(p)
    }

    /// The network declared under `role`.
    pub fn network(&self, role: &str) -> Result<&ArchitectureSpec> {
        self.networks.get(role).ok_or_else(|| {
            CmktError::Config(format!(
                "preset `{}` has no network `{role}` (has: {})",
                self.name,
                self.networks.keys().cloned().collect::<Vec<_>>().join(", ")
            ))
        })
    }
}

/// Resolves a builtin preset name (with or without `.cfg`) or a file path.
pub fn preset(name_or_path: &str) -> Result<PresetFile> {
    let stem = name_or_path.strip_suffix(".cfg").unwrap_or(name_or_path);
    if let Some((_, text)) = BUILTIN.iter().find(|(n, _)| *n == stem) {
        return PresetFile::parse(text);
    }
    let path = Path::new(name_or_path);
    if path.exists() {
        return PresetFile::load(path);
    }
    Err(CmktError::Config(format!(
        "`{name_or_path}` is neither a file nor a builtin preset ({})",
        builtin_names().join(", ")
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build_model;
    use ndarray::{ArrayD, IxDyn};

    #[test]
    fn every_builtin_parses_and_builds() {
        for name in builtin_names() {
            let p = preset(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!p.networks.is_empty(), "{name}");
            for (role, spec) in &p.networks {
                let out = spec.output_shape().unwrap();
                if let Some(declared) = &spec.output_shape {
                    assert_eq!(&out, declared, "{name}/{role}");
                }
            }
        }
    }

    #[test]
    fn compact_forward_shapes() {
        for name in builtin_names().into_iter().filter(|n| n.starts_with("compact")) {
            let p = preset(name).unwrap();
            for spec in p.networks.values() {
                let m = build_model(spec, 0).unwrap();
                let mut shape = vec![2];
                shape.extend_from_slice(&spec.input_shape);
                let y = m.infer(&ArrayD::from_elem(IxDyn(&shape), 0.3)).unwrap();
                assert_eq!(&y.shape()[1..], &spec.output_shape().unwrap()[..]);
            }
        }
    }

    #[test]
    fn cfg_suffix_is_accepted() {
        assert_eq!(preset("table4.cfg").unwrap().name, "table4");
        assert!(preset("no_such_preset").is_err());
    }
}
