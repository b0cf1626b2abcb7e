use std::path::Path;
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::{PipelineError, RunConfig};
use crate::io::write_atomic;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Provenance written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub git_describe: String,
    pub version: String,
    pub config: RunConfig,
    pub outputs: Vec<String>,
    /// Free-form results, e.g. parameter hashes or final losses.
    #[serde(default)]
    pub notes: serde_json::Map<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.to_string(),
            seed: config.seed,
            git_describe: git_describe(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            outputs: Vec::new(),
            notes: serde_json::Map::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl Into<serde_json::Value>) {
        self.notes.insert(key.to_string(), value.into());
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_vec_pretty(self).expect("manifest serializes");
        write_atomic(&dir.join(MANIFEST_FILE), &json)?;
        Ok(())
    }
}

/// `git describe --always --dirty` of the working directory, or `"unknown"`.
pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_string())
}
