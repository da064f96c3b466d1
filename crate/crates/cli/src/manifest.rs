//! Reproducibility manifests. Every command writes one; rerunning a command
//! whose manifest matches reproduces its artifacts bit-for-bit on the same
//! platform (wall-clock fields live only in log files, never in manifests).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tripletgen::error::{Error, Result};

use crate::config::RunConfig;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub manifest_version: u32,
    pub command: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    pub git_describe: String,
    pub format_versions: BTreeMap<String, u32>,
    /// Input artifacts: path → content hash.
    pub inputs: BTreeMap<String, String>,
    /// Command-specific measurements (imbalance ratios, counts, ...).
    pub measured: serde_json::Value,
}

pub fn fnv_hex(bytes: &[u8]) -> String {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

pub fn config_hash(config: &RunConfig) -> String {
    fnv_hex(serde_json::to_string(config).expect("config serializes").as_bytes())
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(fnv_hex(&bytes))
}

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .map(|o| String::from_utf8_lossy(&o.stdout).trim().to_string())
        .unwrap_or_else(|| "unknown".into())
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        let mut format_versions = BTreeMap::new();
        format_versions.insert("manifest".into(), MANIFEST_VERSION);
        format_versions.insert("checkpoint".into(), tripletgen::diffusion::checkpoint::FORMAT_VERSION);
        format_versions.insert("annotation".into(), 1);
        format_versions.insert("embedding_table".into(), 1);
        Manifest {
            manifest_version: MANIFEST_VERSION,
            command: command.into(),
            config: config.clone(),
            config_hash: config_hash(config),
            seeds: BTreeMap::new(),
            git_describe: git_describe(),
            format_versions,
            inputs: BTreeMap::new(),
            measured: serde_json::Value::Null,
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.into(), value);
        self
    }

    pub fn input(mut self, name: &str, hash: String) -> Self {
        self.inputs.insert(name.into(), hash);
        self
    }

    pub fn measured(mut self, value: serde_json::Value) -> Self {
        self.measured = value;
        self
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}
