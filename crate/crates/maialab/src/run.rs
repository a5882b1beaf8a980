//! Orchestration shared by the CLI commands: one run directory, one client
//! registry and one manifest per invocation.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use maialab_core::eval::ground_truth_agreement;
use maialab_core::roster::table_a2;
use maialab_core::scene::SceneImage;
use maialab_core::{ConceptVocabulary, FinalReport, NeuronAddress, SyntheticNeuronSpec};
use serde::{Deserialize, Serialize};

use crate::adapter::{ModelRegistry, ToyConvNet};
use crate::cache::{ActivationCache, CachedSystem};
use crate::clients::ClientRegistry;
use crate::config::{ConfigError, RunConfig};
use crate::exemplars::{default_corpus, ExemplarIndex, IndexError};
use crate::fsutil::write_json;
use crate::image::Image;
use crate::manifest::RunManifest;
use crate::session::{AgentSetup, SessionOptions};
use crate::system::{RealModelSystem, SyntheticSystem, System};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown neuron `{0}`")]
    UnknownNeuron(String),
    #[error("roster {path}: {message}")]
    Roster { path: String, message: String },
    #[error("dataset {path}: {message}")]
    Dataset { path: PathBuf, message: String },
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error("run io: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    /// Errors the operator fixes by changing inputs or configuration.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            RunError::Config(_)
                | RunError::UnknownNeuron(_)
                | RunError::Roster { .. }
                | RunError::Dataset { .. }
        )
    }
}

/// A unit ready to be probed, with its ground truth when synthetic.
#[derive(Clone)]
pub struct Target {
    pub address: NeuronAddress,
    pub system: Arc<dyn System>,
    pub spec: Option<SyntheticNeuronSpec>,
}

/// Directory-safe form of an address.
pub fn unit_dir_name(address: &NeuronAddress) -> String {
    address.to_string().replace(':', "_")
}

pub struct Workspace {
    pub config: RunConfig,
    pub vocab: Arc<ConceptVocabulary>,
    pub clients: Arc<ClientRegistry>,
    pub models: Arc<ModelRegistry>,
    pub run_dir: PathBuf,
    pub manifest: RunManifest,
}

impl Workspace {
    /// Validates the config and creates the run directory: `out` if given,
    /// else `<output_dir>/<run_id>`.
    pub fn open(config: RunConfig, command: &str, out: Option<&Path>) -> Result<Self, RunError> {
        config.validate()?;
        let vocab = Arc::new(ConceptVocabulary::table_default());
        let clients = Arc::new(
            ClientRegistry::from_keys(&config.clients, vocab.clone()).map_err(ConfigError::from)?,
        );
        let mut models = ModelRegistry::new();
        for name in config.models.keys() {
            models.register(name, Box::new(ToyConvNet::new(config.seed)));
        }
        let manifest = RunManifest::start(&config, command);
        let run_dir = match out {
            Some(p) => p.to_path_buf(),
            None => config.output_dir.join(&manifest.run_id),
        };
        std::fs::create_dir_all(&run_dir)?;
        Ok(Self {
            config,
            vocab,
            clients,
            models: Arc::new(models),
            run_dir,
            manifest,
        })
    }

    fn wrap(&self, system: Arc<dyn System>) -> Arc<dyn System> {
        match &self.config.cache_dir {
            Some(dir) => Arc::new(CachedSystem::new(system, ActivationCache::new(dir))),
            None => system,
        }
    }

    /// Accepts `synthetic:table_a2:<unit or name>` or `<model>:<layer>:<unit>`
    /// for a configured model.
    pub fn resolve(&self, text: &str) -> Result<Target, RunError> {
        let unknown = || RunError::UnknownNeuron(text.to_string());
        if let Some(key) = text.strip_prefix("synthetic:table_a2:") {
            let roster = table_a2();
            let index = match key.parse::<usize>() {
                Ok(i) if i < roster.len() => i,
                Ok(_) => return Err(unknown()),
                Err(_) => roster.iter().position(|s| s.name() == key).ok_or_else(unknown)?,
            };
            let address = NeuronAddress::synthetic(index as u32);
            let spec = roster[index].clone();
            let system = Arc::new(SyntheticSystem::new(address.clone(), spec.clone(), self.vocab.clone()));
            return Ok(Target {
                address,
                system: self.wrap(system),
                spec: Some(spec),
            });
        }
        let address: NeuronAddress = text.parse().map_err(|_| unknown())?;
        let system = RealModelSystem::register(self.models.clone(), address.clone())
            .map_err(|e| RunError::UnknownNeuron(format!("{text}: {e}")))?;
        Ok(Target {
            address,
            system: self.wrap(Arc::new(system)),
            spec: None,
        })
    }

    /// `table_a2` names the built-in roster; anything else is a file with one
    /// address per line (`#` starts a comment).
    pub fn resolve_roster(&self, roster: &str) -> Result<Vec<Target>, RunError> {
        if roster == "table_a2" {
            return (0..table_a2().len())
                .map(|i| self.resolve(&format!("synthetic:table_a2:{i}")))
                .collect();
        }
        let text = std::fs::read_to_string(roster).map_err(|e| RunError::Roster {
            path: roster.to_string(),
            message: e.to_string(),
        })?;
        let targets: Vec<Target> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(|l| self.resolve(l))
            .collect::<Result<_, _>>()?;
        if targets.is_empty() {
            return Err(RunError::Roster {
                path: roster.to_string(),
                message: "no neurons listed".into(),
            });
        }
        Ok(targets)
    }

    /// The configured dataset, or the default synthetic corpus.
    pub fn corpus(&self) -> Result<Vec<Image>, RunError> {
        match &self.config.dataset.path {
            Some(path) => {
                let err = |message: String| RunError::Dataset {
                    path: path.clone(),
                    message,
                };
                let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
                let scenes: Vec<SceneImage> =
                    serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
                Ok(scenes.into_iter().map(Image::scene).collect())
            }
            None => Ok(default_corpus(
                &self.vocab,
                &table_a2(),
                self.config.dataset.random_scenes,
                self.config.dataset.per_group,
                self.config.seed,
            )),
        }
    }

    pub fn exemplar_index(&self) -> Result<Arc<ExemplarIndex>, RunError> {
        let mut index = ExemplarIndex::new(self.corpus()?)?;
        if let Some(dir) = &self.config.cache_dir {
            index = index.with_cache_dir(&dir.join("exemplars"));
        }
        Ok(Arc::new(index))
    }

    pub fn session_options(&self) -> SessionOptions {
        SessionOptions {
            budget: self.config.round_budget,
            timeout: Duration::from_secs_f64(self.config.timeout_secs),
            nudge: self.config.nudge,
        }
    }

    pub fn agent_setup(&self, exemplars: Option<Arc<ExemplarIndex>>) -> AgentSetup {
        AgentSetup {
            vocab: self.vocab.clone(),
            clients: self.clients.clone(),
            backbone: self.config.backbone.clone(),
            enabled: self.config.ablation.enabled_tools(),
            options: self.session_options(),
            run_id: self.manifest.run_id.clone(),
            seed: self.config.seed,
            exemplars,
            image_root: self.config.save_images.then(|| self.run_dir.clone()),
        }
    }

    pub fn artifact(&mut self, path: &Path) {
        self.manifest.add_artifact(&self.run_dir, path);
    }

    /// Lists the images directory when present and writes the manifest.
    pub fn finish(mut self) -> Result<RunManifest, RunError> {
        let images = self.run_dir.join("images");
        if images.is_dir() {
            self.artifact(&images);
        }
        self.manifest.finish(&self.run_dir, &self.clients)?;
        Ok(self.manifest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescribeResult {
    pub neuron: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<FinalReport>,
    /// Ground-truth agreement, for synthetic units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Runs `f` over `items` on at most `workers` threads, keeping input order.
pub fn bounded_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("result slots")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|r| r.expect("every item processed"))
        .collect()
}

/// One description session per target. Writes `units/<address>/` per unit
/// and `reports.json` for the whole run.
pub fn describe(ws: &mut Workspace, targets: &[Target]) -> Result<Vec<DescribeResult>, RunError> {
    let exemplars = if ws.config.ablation.exemplars {
        Some(ws.exemplar_index()?)
    } else {
        None
    };
    let setup = ws.agent_setup(exemplars);
    let task = crate::prompts::TaskPrompt::new(maialab_core::report::ReportKind::NeuronDescription);
    let units = ws.run_dir.join("units");
    let vocab = ws.vocab.clone();
    let results = bounded_map(targets, ws.config.concurrency, |t| {
        let dir = units.join(unit_dir_name(&t.address));
        let task = task.clone().with_slot("unit", &t.address.to_string());
        match setup.run(&task, t.system.clone(), Some(&dir)) {
            Ok(out) => DescribeResult {
                neuron: t.address.to_string(),
                agreement: t.spec.as_ref().map(|s| ground_truth_agreement(&vocab, s, &out.report)),
                report: Some(out.report),
                error: None,
            },
            Err(e) => DescribeResult {
                neuron: t.address.to_string(),
                report: None,
                agreement: None,
                error: Some(e.to_string()),
            },
        }
    });
    for (t, r) in targets.iter().zip(&results) {
        let dir = units.join(unit_dir_name(&t.address));
        for f in ["transcript.jsonl", "log.jsonl", "report.json"] {
            if dir.join(f).exists() {
                ws.artifact(&dir.join(f));
            }
        }
        if let Some(e) = &r.error {
            ws.manifest.failures.push(format!("{}: {e}", r.neuron));
        }
    }
    let summary = ws.run_dir.join("reports.json");
    write_json(&summary, &results)?;
    ws.artifact(&summary);
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_map_keeps_order() {
        let items: Vec<u32> = (0..37).collect();
        let out = bounded_map(&items, 4, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(bounded_map(&Vec::<u32>::new(), 3, |x| *x).is_empty());
    }

    #[test]
    fn resolves_by_name_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace::open(RunConfig::default(), "test", Some(dir.path())).unwrap();
        let a = ws.resolve("synthetic:table_a2:stripes").unwrap();
        let b = ws.resolve(&a.address.to_string()).unwrap();
        assert_eq!(a.address, b.address);
        assert!(ws.resolve("synthetic:table_a2:nonsense").is_err());
        assert!(ws.resolve("resnet152:layer2:3").is_ok());
        assert!(ws.resolve("resnet152:layer9:3").is_err());
        assert_eq!(ws.resolve_roster("table_a2").unwrap().len(), table_a2().len());
    }
}
