//! Audit pipelines: filtering a planted final layer down to class-selective
//! features, and naming the context a planted biased classifier relies on.

use std::path::Path;
use std::sync::Arc;

use maialab_core::audit::{
    lambda_for_sparsity, retrain_and_evaluate, standardize, AuditError, L1Options, PlantedBiasSpec,
    PlantedDataset, PlantedDatasetSpec, CLASS_CONCEPTS, DEFAULT_MAX_STEPS, ENV_CONCEPTS,
};
use maialab_core::report::ReportKind;
use maialab_core::{FinalReport, Verdict};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fsutil::{write_atomic, write_json};
use crate::prompts::TaskPrompt;
use crate::session::{AgentError, AgentSetup};
use crate::system::{PlantedBiasSystem, PlantedFeatureSystem, System};

pub const DEFAULT_TOP: usize = 50;
pub const DEFAULT_RANDOM_SUBSETS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("AuditError: {0}")]
    Audit(#[from] AuditError),
    #[error("audit io: {0}")]
    Io(#[from] std::io::Error),
    #[error("audit csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

#[derive(Debug, Clone)]
pub struct SpuriousAuditOptions {
    pub dataset: PlantedDatasetSpec,
    pub top: usize,
    pub random_subsets: usize,
    pub max_steps: usize,
    /// Solver settings for the sparsity search.
    pub l1: L1Options,
    /// Solver settings for unregularized retrains.
    pub retrain: L1Options,
}

impl SpuriousAuditOptions {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            dataset: PlantedDatasetSpec::with_seed(seed),
            top: DEFAULT_TOP,
            random_subsets: DEFAULT_RANDOM_SUBSETS,
            max_steps: DEFAULT_MAX_STEPS,
            l1: L1Options::default(),
            retrain: L1Options {
                kkt_tol: 1e-5,
                ..L1Options::default()
            },
        }
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub subset: String,
    pub method: String,
    pub units: usize,
    pub balanced: bool,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVerdict {
    pub column: usize,
    pub verdict: Verdict,
    /// Present when the session failed or the report did not parse.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excluded_because: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousAudit {
    pub seed: u64,
    pub rows: Vec<AuditRow>,
    pub top: Vec<usize>,
    pub agent_subset: Vec<usize>,
    pub verdicts: Vec<FeatureVerdict>,
    /// False when a sparsity target could only be approximated.
    pub exact_sparsity: bool,
}

impl SpuriousAudit {
    pub fn row(&self, subset: &str) -> Option<&AuditRow> {
        self.rows.iter().find(|r| r.subset == subset)
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["subset", "method", "units", "balanced", "accuracy"])?;
        for r in &self.rows {
            w.write_record([
                r.subset.clone(),
                r.method.clone(),
                r.units.to_string(),
                r.balanced.to_string(),
                format!("{:.4}", r.accuracy),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Classifies each column with a spurious-classification session. Sessions
/// that fail or do not parse count as SPURIOUS.
pub fn filter_with_agent(
    setup: &AgentSetup,
    data: &PlantedDataset,
    columns: &[usize],
    unit_root: Option<&Path>,
) -> Vec<FeatureVerdict> {
    let classes = CLASS_CONCEPTS[..data.spec.n_classes].join(", ");
    let envs = ENV_CONCEPTS[..data.spec.n_envs].join(", ");
    let task = TaskPrompt::new(ReportKind::SpuriousClassification)
        .with_slot("classes", &classes)
        .with_slot("environments", &envs);
    columns
        .iter()
        .map(|&column| {
            let system: Arc<dyn System> = Arc::new(PlantedFeatureSystem::new(
                column,
                data.roles[column],
                setup.vocab.clone(),
            ));
            let dir = unit_root.map(|r| r.join(format!("planted_final_{column}")));
            let (verdict, excluded_because) = match setup.run(&task, system, dir.as_deref()) {
                Ok(out) if out.report.parse_ok => match out.report.verdict {
                    Some(v) => (v, None),
                    None => (Verdict::Spurious, Some("no verdict".to_string())),
                },
                Ok(out) => (
                    Verdict::Spurious,
                    Some(format!("unparsed report: {}", out.report.diagnostics.join("; "))),
                ),
                Err(e) => (Verdict::Spurious, Some(e.to_string())),
            };
            FeatureVerdict {
                column,
                verdict,
                excluded_because,
            }
        })
        .collect()
}

/// Every row of the results table for one planted dataset.
pub fn run_spurious_audit(
    setup: &AgentSetup,
    opts: &SpuriousAuditOptions,
    unit_root: Option<&Path>,
) -> Result<SpuriousAudit, PipelineError> {
    let data = PlantedDataset::generate(&opts.dataset)?;
    let n_classes = data.spec.n_classes;
    let (x_fit, stats) = standardize(&data.fit.features)?;
    let x_test = stats.transform(&data.test.features)?;
    let (y_fit, y_test) = (&data.fit.labels, &data.test.labels);
    let retrain = |cols: &[usize]| {
        retrain_and_evaluate(&x_fit, y_fit, &x_test, y_test, cols, n_classes, &opts.retrain)
            .map(|(acc, _)| acc)
    };
    let mut rows = Vec::new();
    let mut row = |subset: String, method: &str, units: usize, accuracy: f64| {
        rows.push(AuditRow {
            subset,
            method: method.to_string(),
            units,
            balanced: false,
            accuracy,
        })
    };

    let all: Vec<usize> = (0..x_fit.cols()).collect();
    row("all".into(), "original readout", all.len(), retrain(&all)?);

    let top_k = opts.top.min(x_fit.cols());
    let search = lambda_for_sparsity(&x_fit, y_fit, n_classes, top_k, opts.max_steps, &opts.l1)?;
    let mut exact = search.exact;
    let top = search.path.nonzero_neurons.clone();
    row(format!("l1-top{top_k}"), "l1 sparsity match", top.len(), retrain(&top)?);

    let verdicts = filter_with_agent(setup, &data, &top, unit_root);
    let agent: Vec<usize> = verdicts
        .iter()
        .filter(|v| v.verdict == Verdict::Selective)
        .map(|v| v.column)
        .collect();
    let k = agent.len();
    if k > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.dataset.seed ^ 0x5eed);
        let mut total = 0.0;
        for _ in 0..opts.random_subsets {
            let cols: Vec<usize> = sample(&mut rng, top.len(), k).into_iter().map(|i| top[i]).collect();
            total += retrain(&cols)?;
        }
        let n = opts.random_subsets.max(1) as f64;
        row(format!("random-{k}"), "random subset of l1 top", k, total / n);

        let x_top = x_fit.select_columns(&top);
        let nested = lambda_for_sparsity(&x_top, y_fit, n_classes, k, opts.max_steps, &opts.l1)?;
        exact &= nested.exact;
        let cols: Vec<usize> = nested.path.nonzero_neurons.iter().map(|&i| top[i]).collect();
        row(format!("l1-top{k}"), "l1 within l1 top", cols.len(), retrain(&cols)?);

        row(format!("agent-{k}"), "agent filter of l1 top", k, retrain(&agent)?);
    }
    Ok(SpuriousAudit {
        seed: opts.dataset.seed,
        rows,
        top,
        agent_subset: agent,
        verdicts,
        exact_sparsity: exact,
    })
}

/// Writes `features.csv`, `labels.csv`, `tags.json` and `pairings.json`.
pub fn write_dataset_bundle(data: &PlantedDataset, dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir)?;
    let mut features = csv::Writer::from_writer(Vec::new());
    let mut labels = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = std::iter::once("split".to_string())
        .chain((0..data.roles.len()).map(|j| format!("f{j}")))
        .collect();
    features.write_record(&header)?;
    labels.write_record(["split", "label", "env"])?;
    for (name, split) in [("fit", &data.fit), ("test", &data.test)] {
        for r in 0..split.features.rows() {
            let row = std::iter::once(name.to_string())
                .chain(split.features.row(r).iter().map(|v| v.to_string()));
            features.write_record(row)?;
            labels.write_record([name.to_string(), split.labels[r].to_string(), split.envs[r].to_string()])?;
        }
    }
    let bytes = |w: csv::Writer<Vec<u8>>| w.into_inner().map_err(|e| e.into_error());
    write_atomic(&dir.join("features.csv"), &bytes(features)?)?;
    write_atomic(&dir.join("labels.csv"), &bytes(labels)?)?;
    write_json(&dir.join("tags.json"), &data.roles)?;
    write_json(
        &dir.join("pairings.json"),
        &serde_json::json!({
            "classes": &CLASS_CONCEPTS[..data.spec.n_classes],
            "environments": &ENV_CONCEPTS[..data.spec.n_envs],
            "train": data.spec.train_pairing,
            "test": data.spec.test_pairing,
            "seed": data.spec.seed,
        }),
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasAudit {
    pub class_concept: String,
    pub planted_context: Option<String>,
    pub report: FinalReport,
    /// Whether the report's bias text names the planted context, or states
    /// uniform behavior when none was planted.
    pub found: bool,
}

pub fn run_bias_audit(
    setup: &AgentSetup,
    spec: PlantedBiasSpec,
    unit_dir: Option<&Path>,
) -> Result<BiasAudit, PipelineError> {
    let task = TaskPrompt::new(ReportKind::BiasIdentification)
        .with_slot("class_label", &spec.class_concept);
    let system: Arc<dyn System> = Arc::new(PlantedBiasSystem::new(spec.clone(), setup.vocab.clone()));
    let out = setup.run(&task, system, unit_dir)?;
    let text = out.report.bias_text.clone().unwrap_or_default();
    let found = match &spec.context {
        Some(ctx) => setup.vocab.concepts_in(&text).iter().any(|c| c == ctx),
        None => text.contains("uniform"),
    };
    Ok(BiasAudit {
        class_concept: spec.class_concept,
        planted_context: spec.context,
        report: out.report,
        found,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::{ClientKeys, ClientRegistry};
    use maialab_core::ConceptVocabulary;

    fn setup() -> AgentSetup {
        let vocab = Arc::new(ConceptVocabulary::table_default());
        let clients = Arc::new(ClientRegistry::from_keys(&ClientKeys::default(), vocab.clone()).unwrap());
        AgentSetup::new(vocab, clients, 0)
    }

    #[test]
    fn agent_keeps_only_selective_columns() {
        let data = PlantedDataset::generate(&PlantedDatasetSpec::with_seed(2)).unwrap();
        let cols: Vec<usize> = (0..data.roles.len()).collect();
        let verdicts = filter_with_agent(&setup(), &data, &cols, None);
        for v in verdicts {
            let want = if data.roles[v.column].is_selective() {
                Verdict::Selective
            } else {
                Verdict::Spurious
            };
            assert_eq!(v.verdict, want, "column {} ({:?})", v.column, data.roles[v.column]);
        }
    }

    #[test]
    fn bias_audit_names_context_and_uniform_case() {
        let s = setup();
        let hit = run_bias_audit(&s, PlantedBiasSpec::new("flute", Some("hand"), 1), None).unwrap();
        assert!(hit.found, "{:?}", hit.report);
        let flat = run_bias_audit(&s, PlantedBiasSpec::new("vase", None, 1), None).unwrap();
        assert!(flat.found, "{:?}", flat.report);
    }

    #[test]
    fn bundle_has_all_files() {
        let data = PlantedDataset::generate(&PlantedDatasetSpec {
            n_fit: 20,
            n_test: 20,
            ..PlantedDatasetSpec::with_seed(0)
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset_bundle(&data, dir.path()).unwrap();
        for f in ["features.csv", "labels.csv", "tags.json", "pairings.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
    }
}
