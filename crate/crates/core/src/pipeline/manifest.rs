use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    /// Effective configuration.
    pub config: serde_json::Value,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub seed: u64,
    pub schema_hash: String,
    /// Artifact name to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(stage: &str, config: serde_json::Value, seed: u64, schema_hash: &str) -> Self {
        let config_hash = sha256_hex(config.to_string().as_bytes());
        Self {
            stage: stage.to_string(),
            config,
            config_hash,
            seed,
            schema_hash: schema_hash.to_string(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(mut self, name: &str, bytes: &[u8]) -> Self {
        self.inputs.insert(name.to_string(), sha256_hex(bytes));
        self
    }

    pub fn output(mut self, name: &str, bytes: &[u8]) -> Self {
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
