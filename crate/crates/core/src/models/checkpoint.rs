//! On-disk checkpoints: `manifest.json` (spec, seed, substrate) next to
//! `params.npy` and `buffers.npy` holding the flat parameter and
//! running-statistic vectors in layer order.

use std::fs;
use std::path::Path;

use ndarray::Array1;
use ndarray_npy::{read_npy, write_npy};
use serde::{Deserialize, Serialize};

use super::model::TrainableModel;
use super::spec::ArchitectureSpec;
use crate::error::{CmktError, Result};

pub const SUBSTRATE: &str = concat!("cmkt-nn-f64/", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub spec: ArchitectureSpec,
    pub seed: u64,
    pub substrate: String,
    pub param_count: usize,
    pub buffer_count: usize,
}

pub fn save_checkpoint(model: &TrainableModel, dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| CmktError::io(dir, e))?;
    let params = Array1::from(model.flat_params());
    let buffers = Array1::from(model.flat_buffers());
    let manifest = CheckpointManifest {
        spec: model.spec().clone(),
        seed: model.seed(),
        substrate: SUBSTRATE.to_string(),
        param_count: params.len(),
        buffer_count: buffers.len(),
    };
    let mpath = dir.join("manifest.json");
    fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| CmktError::io(&mpath, e))?;
    write_npy(dir.join("params.npy"), &params).map_err(|e| CmktError::Npy(e.to_string()))?;
    write_npy(dir.join("buffers.npy"), &buffers).map_err(|e| CmktError::Npy(e.to_string()))?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainableModel> {
    let mpath = dir.join("manifest.json");
    if !mpath.exists() {
        return Err(CmktError::MissingArtifact {
            path: mpath,
            hint: "train a model first or point at a checkpoint directory".into(),
        });
    }
    let text = fs::read_to_string(&mpath).map_err(|e| CmktError::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)?;
    if manifest.substrate != SUBSTRATE {
        log::warn!("checkpoint written by {}, loading with {SUBSTRATE}", manifest.substrate);
    }
    let mut model = TrainableModel::new(manifest.spec, manifest.seed)?;
    let params: Array1<f64> = read_npy(dir.join("params.npy")).map_err(|e| CmktError::Npy(e.to_string()))?;
    let buffers: Array1<f64> = read_npy(dir.join("buffers.npy")).map_err(|e| CmktError::Npy(e.to_string()))?;
    model.set_flat_params(params.as_slice().expect("contiguous"))?;
    model.set_flat_buffers(buffers.as_slice().expect("contiguous"))?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::layer::*;
    use crate::models::build_model;

    #[test]
    fn round_trip_is_exact() {
        let spec = ArchitectureSpec::new(vec![1, 6, 6], vec![conv_same(2, 3), relu(), flatten(), dense(3), batchnorm()]);
        let mut m = build_model(&spec, 11).unwrap();
        let b: Vec<f64> = (0..m.flat_buffers().len()).map(|i| i as f64 * 0.25).collect();
        m.set_flat_buffers(&b).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&m, dir.path()).unwrap();
        let back = load_checkpoint(dir.path()).unwrap();
        assert_eq!(back.flat_params(), m.flat_params());
        assert_eq!(back.flat_buffers(), b);
        assert_eq!(back.spec(), m.spec());
    }

    #[test]
    fn missing_manifest_is_actionable() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(CmktError::MissingArtifact { .. })));
    }
}
