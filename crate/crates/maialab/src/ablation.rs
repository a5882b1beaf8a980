//! Tool ablations: the same units described under different tool sets,
//! each scored by agreement and by the predictive evaluation.

use std::collections::BTreeMap;
use std::sync::Arc;

use maialab_core::eval::{ground_truth_agreement, MeanAccumulator};
use maialab_core::report::ReportKind;
use serde::{Deserialize, Serialize};

use crate::clients::{ClientManifestEntry, ClientRegistry};
use crate::config::{AblationFlags, ConfigError};
use crate::eval::{report_text, score_description};
use crate::exemplars::ExemplarIndex;
use crate::prompts::TaskPrompt;
use crate::run::{RunError, Target, Workspace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub units: usize,
    pub parsed: usize,
    /// Mean ground-truth agreement over synthetic units.
    pub agreement: MeanAccumulator,
    pub positive: MeanAccumulator,
    pub neutral: MeanAccumulator,
    /// Client dispatches made by this configuration's sessions.
    pub counters: BTreeMap<String, ClientManifestEntry>,
    pub failures: Vec<String>,
}

pub const STANDARD_CONFIGS: [AblationFlags; 3] = [
    AblationFlags {
        exemplars: true,
        generation: true,
    },
    AblationFlags {
        exemplars: true,
        generation: false,
    },
    AblationFlags {
        exemplars: false,
        generation: true,
    },
];

/// Sessions under each config get a fresh client registry so the counters
/// are per config. Scoring uses a separate registry and is not counted.
pub fn run_ablation(
    ws: &Workspace,
    targets: &[Target],
    configs: &[AblationFlags],
    index: Option<Arc<ExemplarIndex>>,
) -> Result<Vec<AblationRow>, RunError> {
    let scorer = ClientRegistry::from_keys(&ws.config.clients, ws.vocab.clone())
        .map_err(ConfigError::from)?;
    let task = TaskPrompt::new(ReportKind::NeuronDescription);
    let mut rows = Vec::new();
    for flags in configs {
        let clients = Arc::new(
            ClientRegistry::from_keys(&ws.config.clients, ws.vocab.clone())
                .map_err(ConfigError::from)?,
        );
        let mut setup = ws.agent_setup(if flags.exemplars { index.clone() } else { None });
        setup.clients = clients.clone();
        setup.enabled = flags.enabled_tools();
        setup.image_root = None;
        let mut row = AblationRow {
            config: flags.name().to_string(),
            units: targets.len(),
            parsed: 0,
            agreement: MeanAccumulator::default(),
            positive: MeanAccumulator::default(),
            neutral: MeanAccumulator::default(),
            counters: BTreeMap::new(),
            failures: Vec::new(),
        };
        let outcomes = crate::run::bounded_map(targets, ws.config.concurrency, |t| {
            setup.run(&task, t.system.clone(), None).map(|o| o.report)
        });
        for (t, outcome) in targets.iter().zip(outcomes) {
            let report = match outcome {
                Ok(r) => r,
                Err(e) => {
                    row.failures.push(format!("{}: {e}", t.address));
                    continue;
                }
            };
            if report.parse_ok {
                row.parsed += 1;
            }
            if let Some(spec) = &t.spec {
                row.agreement.push(ground_truth_agreement(&ws.vocab, spec, &report));
            }
            let text = report_text(&report);
            match score_description(
                &ws.vocab,
                t.system.as_ref(),
                scorer.generator.dispatch(),
                &text,
                None,
                ws.config.seed,
            ) {
                Ok(s) => {
                    row.positive.merge(&s.positive);
                    row.neutral.merge(&s.neutral);
                }
                Err(e) => row.failures.push(format!("{}: {e}", t.address)),
            }
        }
        row.counters = clients.manifest();
        rows.push(row);
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[AblationRow]) -> Result<String, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "config",
        "units",
        "parsed",
        "agreement",
        "positive_mean",
        "neutral_mean",
        "generator_calls",
        "editor_calls",
        "exemplar_calls",
    ])?;
    let fmt = |m: &MeanAccumulator| m.mean().map(|v| format!("{v:.4}")).unwrap_or_default();
    let calls = |r: &AblationRow, k: &str| r.counters.get(k).map_or(0, |c| c.calls).to_string();
    for r in rows {
        w.write_record([
            r.config.clone(),
            r.units.to_string(),
            r.parsed.to_string(),
            fmt(&r.agreement),
            fmt(&r.positive),
            fmt(&r.neutral),
            calls(r, "generator"),
            calls(r, "editor"),
            calls(r, "exemplars"),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error())?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
