//! Run manifests and the content hashes that identify them.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use giplab::Graph;
use serde::Serialize;
use sha2::{Digest, Sha256};

/// SHA-256 over a canonical rendering of every graph (sizes, edges,
/// feature bit patterns, labels), in dataset order.
pub fn dataset_fingerprint(graphs: &[Graph]) -> String {
    let mut h = Sha256::new();
    h.update((graphs.len() as u64).to_le_bytes());
    for g in graphs {
        h.update((g.num_nodes() as u64).to_le_bytes());
        h.update((g.feature_dim() as u64).to_le_bytes());
        h.update((g.label() as u64).to_le_bytes());
        h.update((g.edges().len() as u64).to_le_bytes());
        for &(u, v) in g.edges() {
            h.update((u as u64).to_le_bytes());
            h.update((v as u64).to_le_bytes());
        }
        for x in g.features().as_slice() {
            h.update(x.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    /// Hash of command, resolved config and dataset fingerprint; stable
    /// across reruns and output locations.
    pub id: String,
    pub command: String,
    pub config: String,
    pub seed: u64,
    pub dataset: String,
    pub dataset_fingerprint: String,
    pub artifacts: BTreeMap<String, String>,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn new(command: &str, config: String, seed: u64, dataset: String, dataset_fingerprint: String) -> Self {
        let mut h = Sha256::new();
        for part in [command, config.as_str(), dataset_fingerprint.as_str()] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        let id = hex::encode(&h.finalize()[..8]);
        Self {
            id,
            command: command.to_string(),
            config,
            seed,
            dataset,
            dataset_fingerprint,
            artifacts: BTreeMap::new(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn artifact(&mut self, name: &str, path: &Path) {
        self.artifacts.insert(name.to_string(), path.display().to_string());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
