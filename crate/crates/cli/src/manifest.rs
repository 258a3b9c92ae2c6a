//! Content digests and the per-command run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        Ok(Self {
            path: path.to_path_buf(),
            sha256: sha256_file(path)?,
        })
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// `manifest.json`: what was run, on which inputs, and what it wrote.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub components: BTreeMap<String, String>,
    pub started_at: u64,
    pub finished_at: u64,
    pub artifacts: Vec<FileDigest>,
}

impl RunManifest {
    pub fn start(command: &str, config_hash: String, seed: Option<u64>) -> Self {
        let mut components = BTreeMap::new();
        components.insert("claimopt".to_string(), env!("CARGO_PKG_VERSION").to_string());
        Self {
            command: command.to_string(),
            config_hash,
            seed,
            inputs: Vec::new(),
            components,
            started_at: unix_now(),
            finished_at: 0,
            artifacts: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileDigest::of(path)?);
        Ok(())
    }

    pub fn component(&mut self, role: &str, name: impl Into<String>) {
        self.components.insert(role.to_string(), name.into());
    }

    pub fn artifact(&mut self, path: &Path) -> Result<()> {
        self.artifacts.push(FileDigest::of(path)?);
        Ok(())
    }

    /// Stamp the finish time and write `manifest.json` into `dir`.
    pub fn finish(mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_at = unix_now();
        let path = dir.join("manifest.json");
        write_json(&path, &self)?;
        Ok(path)
    }
}

/// Pretty JSON with a trailing newline.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}
