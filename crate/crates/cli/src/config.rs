//! JSON run configuration, flag overrides and provenance hashes.

use std::path::Path;

use hermit_core::PipelineConfig;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Reads a config file; a missing path means all defaults. Unknown keys are rejected.
pub fn load(path: Option<&Path>) -> Result<PipelineConfig> {
    let Some(path) = path else { return Ok(PipelineConfig::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Flags that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub n_trees: Option<usize>,
    pub no_edge_features: bool,
}

impl Overrides {
    pub fn apply(&self, mut cfg: PipelineConfig) -> PipelineConfig {
        if let Some(seed) = self.seed {
            cfg = cfg.with_seed(seed);
        }
        if let Some(e) = self.max_epochs {
            cfg.model.max_epochs = e;
        }
        if let Some(t) = self.n_trees {
            cfg.forest.n_trees = t;
        }
        if self.no_edge_features {
            cfg.model.edge_features_enabled = false;
        }
        cfg
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the config's canonical JSON (fields in declaration order, no whitespace).
pub fn config_hash(cfg: &PipelineConfig) -> String {
    sha256_hex(&serde_json::to_vec(cfg).expect("config serializes"))
}
