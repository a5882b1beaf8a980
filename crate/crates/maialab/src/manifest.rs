//! Per-run manifest: what ran, with which config, what it wrote and how
//! often each client was called.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use maialab_core::hash;
use serde::{Deserialize, Serialize};

use crate::clients::{ClientManifestEntry, ClientRegistry};
use crate::config::RunConfig;
use crate::fsutil::write_json;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    /// Paths relative to the run directory.
    pub artifacts: Vec<String>,
    pub counters: BTreeMap<String, ClientManifestEntry>,
    pub failures: Vec<String>,
    pub started_at: u64,
    pub finished_at: u64,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Same config and command give the same id.
pub fn run_id(config: &RunConfig, command: &str) -> String {
    let d = hash::digest_str(&["run", &config.hash(), command]);
    format!("run-{}", hash::short_hex(&d))
}

impl RunManifest {
    pub fn start(config: &RunConfig, command: &str) -> Self {
        Self {
            run_id: run_id(config, command),
            command: command.to_string(),
            config_hash: config.hash(),
            config: config.clone(),
            artifacts: Vec::new(),
            counters: BTreeMap::new(),
            failures: Vec::new(),
            started_at: unix_now(),
            finished_at: 0,
        }
    }

    pub fn add_artifact(&mut self, run_dir: &Path, path: &Path) {
        let rel = path.strip_prefix(run_dir).unwrap_or(path);
        self.artifacts.push(rel.to_string_lossy().replace('\\', "/"));
    }

    /// Records counters, drops listed artifacts that do not exist and writes
    /// the manifest atomically.
    pub fn finish(&mut self, run_dir: &Path, clients: &ClientRegistry) -> std::io::Result<()> {
        self.counters = clients.manifest();
        self.artifacts.sort();
        self.artifacts.dedup();
        let missing: Vec<String> = self
            .artifacts
            .iter()
            .filter(|a| !run_dir.join(a).exists())
            .cloned()
            .collect();
        for m in &missing {
            log::warn!("artifact {m} was listed but not written");
            self.failures.push(format!("missing artifact {m}"));
        }
        self.artifacts.retain(|a| !missing.contains(a));
        self.finished_at = unix_now();
        write_json(&run_dir.join(MANIFEST_FILE), self)
    }
}
