//! Run configuration: TOML file, `MAIALAB_` environment overrides and a
//! hash that ignores key order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use maialab_core::hash;
use serde::{Deserialize, Serialize};

use crate::clients::{ClientKeys, UnknownClient};
use crate::tools::{all_tools, ToolName};

pub const ENV_PREFIX: &str = "MAIALAB_";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("{0}")]
    UnknownClient(#[from] UnknownClient),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Which tool families sessions may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub exemplars: bool,
    /// Covers both text-to-image and editing.
    pub generation: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            exemplars: true,
            generation: true,
        }
    }
}

impl AblationFlags {
    pub fn enabled_tools(self) -> std::collections::BTreeSet<ToolName> {
        let mut tools = all_tools();
        if !self.exemplars {
            tools.remove(&ToolName::DatasetExemplars);
        }
        if !self.generation {
            tools.remove(&ToolName::Text2Image);
            tools.remove(&ToolName::EditImages);
        }
        tools
    }

    pub fn name(self) -> &'static str {
        match (self.exemplars, self.generation) {
            (true, true) => "full",
            (true, false) => "exemplars-only",
            (false, true) => "generation-only",
            (false, false) => "no-tools",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Random one-to-three concept scenes in the default corpus.
    pub random_scenes: usize,
    /// Scenes per roster concept and concept pair in the default corpus.
    pub per_group: usize,
    /// JSON array of scenes replacing the default corpus.
    pub path: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            random_scenes: 400,
            per_group: 16,
            path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub round_budget: u32,
    /// `scripted` or a playbook name.
    pub backbone: String,
    pub output_dir: PathBuf,
    pub concurrency: usize,
    /// Ask for the final answer before the last round.
    pub nudge: bool,
    pub timeout_secs: f64,
    pub clients: ClientKeys,
    pub ablation: AblationFlags,
    pub dataset: DatasetConfig,
    pub cache_dir: Option<PathBuf>,
    /// Write PNGs of logged images under the run directory.
    pub save_images: bool,
    /// Model name to architecture; only `toy` is built in.
    pub models: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            round_budget: crate::session::DEFAULT_ROUND_BUDGET,
            backbone: "scripted".to_string(),
            output_dir: PathBuf::from("runs"),
            concurrency: 1,
            nudge: false,
            timeout_secs: crate::sandbox::DEFAULT_TIMEOUT.as_secs_f64(),
            clients: ClientKeys::default(),
            ablation: AblationFlags::default(),
            dataset: DatasetConfig::default(),
            cache_dir: None,
            save_images: true,
            models: BTreeMap::from([("resnet152".to_string(), "toy".to_string())]),
        }
    }
}

/// Parses an override value as a TOML scalar or array, falling back to a
/// plain string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) {
    match path {
        [] => {}
        [last] => {
            table.insert(last.clone(), value);
        }
        [head, rest @ ..] => {
            let entry = table
                .entry(head.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if !entry.is_table() {
                *entry = toml::Value::Table(toml::Table::new());
            }
            if let toml::Value::Table(t) = entry {
                apply_override(t, rest, value);
            }
        }
    }
}

impl RunConfig {
    /// Loads `path` (or defaults) and applies overrides such as
    /// `MAIALAB_SEED=3` or `MAIALAB_CLIENTS__GENERATOR=scene-compact`.
    pub fn load<I>(path: Option<&Path>, env: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                toml::from_str::<toml::Table>(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
            }
            None => toml::Table::new(),
        };
        for (key, raw) in env {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
            let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
            if path.iter().any(String::is_empty) {
                continue;
            }
            apply_override(&mut table, &path, override_value(&raw));
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.clients.validate()?;
        if self.concurrency == 0 {
            return Err(ConfigError::Invalid("concurrency must be at least 1".into()));
        }
        if self.round_budget == 0 {
            return Err(ConfigError::Invalid("round_budget must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(ConfigError::Invalid("timeout_secs must be positive".into()));
        }
        if let Some((name, arch)) = self.models.iter().find(|(_, a)| a.as_str() != "toy") {
            return Err(ConfigError::Invalid(format!(
                "model `{name}` has unknown architecture `{arch}` (known: toy)"
            )));
        }
        Ok(())
    }

    /// sha256 over the canonical JSON form, whose maps are key-sorted.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_value(self).expect("config serializes").to_string();
        hash::full_hex(&hash::digest(&[canonical.as_bytes()]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_hash_ignores_key_order() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.toml");
        let b = dir.path().join("b.toml");
        std::fs::write(&a, "seed = 4\nround_budget = 9\n[clients]\ngenerator = \"scene\"\n").unwrap();
        std::fs::write(&b, "round_budget = 9\nseed = 4\n[clients]\ngenerator = \"scene\"\n").unwrap();
        let ca = RunConfig::load(Some(&a), []).unwrap();
        let cb = RunConfig::load(Some(&b), []).unwrap();
        assert_eq!(ca.hash(), cb.hash());
        assert_ne!(ca.hash(), RunConfig::default().hash());
    }

    #[test]
    fn env_overrides_reach_nested_keys() {
        let env = [
            ("MAIALAB_SEED".to_string(), "7".to_string()),
            ("MAIALAB_CLIENTS__GENERATOR".to_string(), "scene-compact".to_string()),
            ("MAIALAB_ABLATION__GENERATION".to_string(), "false".to_string()),
            ("OTHER".to_string(), "1".to_string()),
        ];
        let c = RunConfig::load(None, env).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.clients.generator, "scene-compact");
        assert_eq!(c.ablation.name(), "exemplars-only");
    }

    #[test]
    fn unknown_client_key_is_rejected() {
        let env = [("MAIALAB_CLIENTS__DESCRIBER".to_string(), "gpt".to_string())];
        assert!(matches!(RunConfig::load(None, env), Err(ConfigError::UnknownClient(_))));
        let env = [("MAIALAB_BOGUS".to_string(), "1".to_string())];
        assert!(matches!(RunConfig::load(None, env), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn ablation_removes_tool_families() {
        let off = AblationFlags {
            exemplars: true,
            generation: false,
        };
        let tools = off.enabled_tools();
        assert!(!tools.contains(&ToolName::Text2Image) && !tools.contains(&ToolName::EditImages));
        assert!(tools.contains(&ToolName::DatasetExemplars));
    }
}
