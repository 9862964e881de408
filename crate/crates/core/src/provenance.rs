//! Run provenance: every command writes a manifest of its input hashes and
//! the configuration hash next to its outputs, so a result can be traced to
//! exact inputs. Hashes are SHA-256 over file bytes; the config hash covers
//! its canonical JSON serialization.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub fn hash_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

pub fn config_hash(config: &crate::config::PipelineConfig) -> String {
    let json = serde_json::to_string(config).expect("config serializes");
    hash_bytes(json.as_bytes())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    /// Input path -> SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output files produced by the command, relative to the manifest.
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: &crate::config::PipelineConfig) -> Self {
        Self {
            command: command.to_string(),
            config_sha256: config_hash(config),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    /// Records an input by its trailing path components (directory + file
    /// name), so manifests stay identical when the same dataset lives under
    /// different roots.
    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let mut components: Vec<String> = path
            .components()
            .rev()
            .take(2)
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect();
        components.reverse();
        self.inputs.insert(components.join("/"), hash_file(path)?);
        Ok(())
    }

    pub fn record_output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    /// Short provenance value embedded in JSON outputs.
    pub fn stamp(&self) -> serde_json::Value {
        serde_json::json!({
            "command": self.command,
            "config_sha256": self.config_sha256,
            "n_inputs": self.inputs.len(),
        })
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run_manifest.json");
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Format(format!("run manifest: {e}")))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_stable() {
        assert_eq!(
            hash_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn config_hash_tracks_changes() {
        let a = crate::config::PipelineConfig::default();
        let mut b = crate::config::PipelineConfig::default();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.pipeline.iou_threshold = 0.2;
        assert_ne!(config_hash(&a), config_hash(&b));
    }
}
