//! Run directories and the manifest written into each one.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Provenance record of one command invocation. Everything a run writes is
/// listed under `outputs`, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub data_hash: String,
    pub seed: u64,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub const MANIFEST: &str = "manifest.json";

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Output directory of one run, collecting the files written into it.
pub struct RunDir {
    pub path: PathBuf,
    command: String,
    config_hash: String,
    data_hash: String,
    seed: u64,
    started: u64,
    outputs: Vec<String>,
}

impl RunDir {
    /// `out` if given, else `<root>/runs/<command>-<hash prefix>`.
    pub fn create(root: &Path, out: Option<&Path>, command: &str, config_hash: &str, data_hash: &str, seed: u64) -> Result<Self> {
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => root.join("runs").join(format!("{command}-{}", &config_hash[..12.min(config_hash.len())])),
        };
        fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        log::info!("{command}: writing to {}", path.display());
        Ok(RunDir {
            path,
            command: command.into(),
            config_hash: config_hash.into(),
            data_hash: data_hash.into(),
            seed,
            started: unix_now(),
            outputs: Vec::new(),
        })
    }

    /// Absolute path of `name`, recorded as an output.
    pub fn output(&mut self, name: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.into());
        }
        self.path.join(name)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let path = self.output(name);
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.output(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn set_data_hash(&mut self, h: &str) {
        self.data_hash = h.into();
    }

    /// Writes the manifest; call last.
    pub fn finish(self) -> Result<RunManifest> {
        let mut outputs = self.outputs;
        outputs.sort();
        let m = RunManifest {
            command: self.command,
            config_hash: self.config_hash,
            data_hash: self.data_hash,
            seed: self.seed,
            started_unix: self.started,
            finished_unix: unix_now(),
            outputs,
        };
        let path = self.path.join(MANIFEST);
        fs::write(&path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))?;
        println!("{}", self.path.display());
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_dir_keyed_by_hash_and_lists_outputs() {
        let tmp = tempfile::tempdir().unwrap();
        let mut rd = RunDir::create(tmp.path(), None, "train", "abcdef0123456789", "d", 3).unwrap();
        assert!(rd.path.ends_with("runs/train-abcdef012345"));
        rd.write_text("b.txt", "x").unwrap();
        rd.write_json("a.json", &1).unwrap();
        rd.write_text("b.txt", "y").unwrap();
        let dir = rd.path.clone();
        let m = rd.finish().unwrap();
        assert_eq!(m.outputs, vec!["a.json", "b.txt"]);
        assert_eq!(RunManifest::read(&dir).unwrap(), m);
    }
}
