use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub name: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub root: u64,
    pub stages: BTreeMap<String, u64>,
}

/// Batch-log summary of one retrain run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsolationRecord {
    pub seed: u64,
    pub batches: usize,
    pub instances_seen: usize,
    pub forget_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Written at the end of every run, including failed ones. Results are
/// valid only when `complete` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub config_hash: String,
    pub complete: bool,
    pub error: Option<String>,
    pub seeds: Vec<SeedRecord>,
    pub stages: Vec<StageTiming>,
    pub isolation: Vec<IsolationRecord>,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        Self {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            config_hash,
            complete: false,
            error: None,
            seeds: Vec::new(),
            stages: Vec::new(),
            isolation: Vec::new(),
            files: Vec::new(),
        }
    }

    /// Records a written file relative to `root`.
    pub fn add_file(&mut self, root: &Path, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let relative = path.strip_prefix(root).unwrap_or(path);
        self.files.push(FileEntry {
            path: relative.to_string_lossy().replace('\\', "/"),
            bytes: bytes.len() as u64,
            sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
        });
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json + "\n")?;
        Ok(())
    }
}
