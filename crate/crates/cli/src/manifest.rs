use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Provenance attached to every output artifact.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub version: String,
    /// SHA-256 of each input file, keyed by path.
    pub input_digests: BTreeMap<String, String>,
    pub elapsed_seconds: f64,
}

pub struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seeds: Vec<u64>,
    inputs: BTreeMap<String, String>,
    start: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, config: impl Serialize) -> CliResult<Self> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            seeds: Vec::new(),
            inputs: BTreeMap::new(),
            start: Instant::now(),
        })
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seeds.push(seed);
        self
    }

    pub fn input(mut self, path: &Path) -> CliResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        self.inputs.insert(path.display().to_string(), sha256_hex(&bytes));
        Ok(self)
    }

    pub fn finish(&self) -> RunManifest {
        RunManifest {
            command: self.command.clone(),
            config: self.config.clone(),
            seeds: self.seeds.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_digests: self.inputs.clone(),
            elapsed_seconds: self.start.elapsed().as_secs_f64(),
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
