//! Run manifests: the config hash, seeds, and output digests that make a
//! run reproducible and verifiable after the fact.

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::sha256_hex;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub code_version: String,
    pub config_sha256: String,
    pub master_seed: u64,
    /// Derived per-replica seeds, in replica order.
    pub replica_seeds: Vec<u64>,
    /// Cross-parameter advisories from config validation; informational.
    pub advisories: Vec<String>,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputDigest>,
}

impl RunManifest {
    pub fn new(config: &ExperimentConfig, advisories: Vec<String>) -> Self {
        RunManifest {
            experiment: config.experiment.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: config.sha256(),
            master_seed: config.seed,
            replica_seeds: Vec::new(),
            advisories,
            wall_clock_seconds: 0.0,
            outputs: Vec::new(),
        }
    }

    pub fn record_output(&mut self, rel_path: &str, contents: &[u8]) {
        self.outputs.push(OutputDigest {
            path: rel_path.to_string(),
            sha256: sha256_hex(contents),
        });
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Output digests only; what a rerun must reproduce bit-for-bit.
    pub fn output_digests(&self) -> Vec<(String, String)> {
        self.outputs
            .iter()
            .map(|o| (o.path.clone(), o.sha256.clone()))
            .collect()
    }
}
