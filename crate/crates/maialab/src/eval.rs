//! Scores descriptions by how well images drawn from them drive the unit
//! compared with images of unrelated concepts.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use maialab_core::eval::{
    generate_eval_prompts, pair_by_entailment, EvalError, EvalRow, ExemplarPromptSet,
    MeanAccumulator,
};
use maialab_core::{ConceptVocabulary, FinalReport};
use serde::{Deserialize, Serialize};

use crate::clients::Generator;
use crate::fsutil::{write_atomic, write_json};
use crate::system::System;

/// Text a report is evaluated on: its labels as alternatives, or the
/// description when no label parsed.
pub fn report_text(report: &FinalReport) -> String {
    if report.labels.is_empty() {
        report.description.clone()
    } else {
        report.labels.join(" OR ")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionScore {
    pub prompts: ExemplarPromptSet,
    pub positive: MeanAccumulator,
    pub neutral: MeanAccumulator,
}

fn score_side(
    system: &dyn System,
    generator: &dyn Generator,
    prompts: &[String],
    seed: u64,
) -> MeanAccumulator {
    let mut acc = MeanAccumulator::default();
    let mut images = Vec::new();
    for outcome in generator.generate(prompts, seed) {
        match outcome {
            Ok(img) => images.push(img),
            Err(e) => {
                log::warn!("evaluation image failed: {e}");
                acc.push_missing();
            }
        }
    }
    if images.is_empty() {
        return acc;
    }
    match system.score(&images) {
        Ok(values) => values.into_iter().for_each(|v| acc.push(v)),
        Err(e) => {
            log::warn!("evaluation probe failed: {e}");
            (0..images.len()).for_each(|_| acc.push_missing());
        }
    }
    acc
}

/// Mean activation on images of the description versus neutral images.
pub fn score_description(
    vocab: &ConceptVocabulary,
    system: &dyn System,
    generator: &dyn Generator,
    text: &str,
    pool: Option<&[String]>,
    seed: u64,
) -> Result<DescriptionScore, EvalError> {
    let prompts = match pool {
        Some(pool) => {
            let (positive_prompts, neutral_prompts) = pair_by_entailment(vocab, text, pool)?;
            ExemplarPromptSet {
                description: text.to_string(),
                positive_prompts,
                neutral_prompts,
            }
        }
        None => generate_eval_prompts(vocab, text)?,
    };
    prompts.validate()?;
    let positive = score_side(system, generator, &prompts.positive_prompts, seed);
    let neutral = score_side(system, generator, &prompts.neutral_prompts, seed);
    Ok(DescriptionScore {
        prompts,
        positive,
        neutral,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub method: String,
    pub neuron: String,
    pub report: FinalReport,
}

/// Input of `maialab eval`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalManifest {
    pub entries: Vec<EvalEntry>,
    /// Shared prompt pool; when set, each label takes the prompts it most
    /// and least entails from here instead of generated ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitScore {
    pub method: String,
    pub neuron: String,
    pub text: String,
    pub positive: MeanAccumulator,
    pub neutral: MeanAccumulator,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub units: Vec<UnitScore>,
    /// Set when any unit could not be scored or any image is missing.
    pub partial: bool,
    pub failures: Vec<String>,
}

impl EvalReport {
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "layer",
            "units",
            "positive_mean",
            "neutral_mean",
            "positive_missing",
            "neutral_missing",
        ])?;
        let fmt = |m: &MeanAccumulator| m.mean().map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.method.clone(),
                r.layer.clone(),
                r.units.to_string(),
                fmt(&r.positive),
                fmt(&r.neutral),
                r.positive.missing.to_string(),
                r.neutral.missing.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        write_json(&dir.join("eval.json"), self)?;
        let csv = self.to_csv().map_err(std::io::Error::other)?;
        write_atomic(&dir.join("eval.csv"), csv.as_bytes())
    }
}

pub type Resolver<'a> = dyn Fn(&str) -> Result<Arc<dyn System>, String> + 'a;

/// Scores every entry and aggregates by `(method, layer)`. Entries that
/// fail are recorded and the report is marked partial.
pub fn evaluate(
    manifest: &EvalManifest,
    vocab: &ConceptVocabulary,
    generator: &dyn Generator,
    resolve: &Resolver,
    seed: u64,
) -> EvalReport {
    let mut out = EvalReport::default();
    let mut rows: BTreeMap<(String, String), EvalRow> = BTreeMap::new();
    for entry in &manifest.entries {
        // the resolver accepts roster names, so the layer comes from the
        // resolved address
        let system = match resolve(&entry.neuron) {
            Ok(s) => s,
            Err(e) => {
                out.failures.push(format!("{}: {e}", entry.neuron));
                continue;
            }
        };
        let layer = system.address().layer_id.clone();
        let text = report_text(&entry.report);
        let score = match score_description(
            vocab,
            system.as_ref(),
            generator,
            &text,
            manifest.pool.as_deref(),
            seed,
        ) {
            Ok(s) => s,
            Err(e) => {
                out.failures.push(format!("{} ({}): {e}", entry.neuron, entry.method));
                continue;
            }
        };
        let row = rows
            .entry((entry.method.clone(), layer.clone()))
            .or_insert_with(|| EvalRow::new(&entry.method, &layer));
        row.units += 1;
        row.positive.merge(&score.positive);
        row.neutral.merge(&score.neutral);
        out.units.push(UnitScore {
            method: entry.method.clone(),
            neuron: entry.neuron.clone(),
            text,
            positive: score.positive,
            neutral: score.neutral,
        });
    }
    out.rows = rows.into_values().collect();
    out.partial = !out.failures.is_empty()
        || out.units.iter().any(|u| u.positive.missing + u.neutral.missing > 0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::{ClientKeys, ClientRegistry};
    use crate::system::SyntheticSystem;
    use maialab_core::report::ReportKind;
    use maialab_core::{NeuronAddress, SyntheticNeuronSpec};

    fn report(label: &str) -> FinalReport {
        let mut r = FinalReport::unparsed(ReportKind::NeuronDescription, 1, "");
        r.labels = vec![label.to_string()];
        r.parse_ok = true;
        r
    }

    #[test]
    fn right_label_beats_wrong_label() {
        let vocab = Arc::new(ConceptVocabulary::table_default());
        let clients = ClientRegistry::from_keys(&ClientKeys::default(), vocab.clone()).unwrap();
        let spec = SyntheticNeuronSpec::monosemantic("dog");
        let system = SyntheticSystem::new(NeuronAddress::synthetic(0), spec, vocab.clone());
        let g = clients.generator.dispatch();
        let right = score_description(&vocab, &system, g, "dog", None, 1).unwrap();
        let wrong = score_description(&vocab, &system, g, "piano", None, 1).unwrap();
        assert!(right.positive.mean().unwrap() > 0.8);
        assert_eq!(wrong.positive.mean().unwrap(), 0.0);
    }

    #[test]
    fn rows_aggregate_and_failures_mark_partial() {
        let vocab = Arc::new(ConceptVocabulary::table_default());
        let clients = ClientRegistry::from_keys(&ClientKeys::default(), vocab.clone()).unwrap();
        let v = vocab.clone();
        let resolve = move |n: &str| -> Result<Arc<dyn System>, String> {
            let addr: NeuronAddress = n.parse().map_err(|e| format!("{e}"))?;
            let spec = SyntheticNeuronSpec::monosemantic("dog");
            Ok(Arc::new(SyntheticSystem::new(addr, spec, v.clone())))
        };
        let manifest = EvalManifest {
            entries: vec![
                EvalEntry {
                    method: "agent".into(),
                    neuron: "synthetic:table_a2:0".into(),
                    report: report("dog"),
                },
                EvalEntry {
                    method: "agent".into(),
                    neuron: "synthetic:table_a2:1".into(),
                    report: report("cat"),
                },
                EvalEntry {
                    method: "agent".into(),
                    neuron: "not an address".into(),
                    report: report("cat"),
                },
            ],
            pool: None,
        };
        let out = evaluate(&manifest, &vocab, clients.generator.dispatch(), &resolve, 3);
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.rows[0].units, 2);
        assert!(out.partial);
        assert!(out.to_csv().unwrap().starts_with("method,layer"));
    }
}
