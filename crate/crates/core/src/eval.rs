//! Predictive evaluation: prompt sets built from a description, entailment
//! pairing, ground-truth agreement and order-independent means.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::hash;
use crate::neuron::SyntheticNeuronSpec;
use crate::report::FinalReport;
use crate::vocab::ConceptVocabulary;

pub const PROMPTS_PER_SIDE: usize = 7;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("description is empty")]
    EmptyDescription,
    #[error("expected {expected} positive and {expected} neutral prompts, got {positive} and {neutral}")]
    PromptCountError {
        expected: usize,
        positive: usize,
        neutral: usize,
    },
    #[error("pairing pool needs at least {needed} prompts, got {got}")]
    PoolTooSmall { needed: usize, got: usize },
    #[error("most- and least-entailed sets overlap")]
    PairingError,
    #[error("prompt set is empty")]
    EmptyPromptSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarPromptSet {
    pub description: String,
    pub positive_prompts: Vec<String>,
    pub neutral_prompts: Vec<String>,
}

impl ExemplarPromptSet {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.positive_prompts.len() != PROMPTS_PER_SIDE
            || self.neutral_prompts.len() != PROMPTS_PER_SIDE
        {
            return Err(EvalError::PromptCountError {
                expected: PROMPTS_PER_SIDE,
                positive: self.positive_prompts.len(),
                neutral: self.neutral_prompts.len(),
            });
        }
        Ok(())
    }
}

/// Sentence frames free of vocabulary concepts.
const FRAMES: [&str; PROMPTS_PER_SIDE] = [
    "a photo of {}",
    "a close-up picture of {}",
    "{} in the center of the frame",
    "a detailed image showing {}",
    "a snapshot featuring {}",
    "a realistic rendering of {}",
    "{} seen from a distance",
];

fn frame(i: usize, subject: &str) -> String {
    FRAMES[i % FRAMES.len()].replace("{}", subject)
}

/// Deterministic prompter. Positives embed the description (rotating over
/// the alternatives of an `A OR B` description); neutrals name vocabulary
/// concepts disjoint from it, picked by hash.
pub fn generate_eval_prompts(
    vocab: &ConceptVocabulary,
    description: &str,
) -> Result<ExemplarPromptSet, EvalError> {
    let description = description.trim();
    if description.is_empty() {
        return Err(EvalError::EmptyDescription);
    }
    let alternatives: Vec<&str> = description
        .split(" OR ")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    let positive_prompts = (0..PROMPTS_PER_SIDE)
        .map(|i| frame(i, alternatives[i % alternatives.len()]))
        .collect();

    let own: BTreeSet<String> = vocab.concepts_in(description).into_iter().collect();
    let mut candidates: Vec<(&str, [u8; 32])> = vocab
        .canonical_tokens()
        .filter(|c| !own.contains(*c))
        .map(|c| (c, hash::digest_str(&["neutral", description, c])))
        .collect();
    candidates.sort_by(|a, b| a.1.cmp(&b.1));
    let neutral_prompts = candidates
        .iter()
        .take(PROMPTS_PER_SIDE)
        .enumerate()
        .map(|(i, (c, _))| frame(i, c))
        .collect();

    let set = ExemplarPromptSet {
        description: description.to_string(),
        positive_prompts,
        neutral_prompts,
    };
    set.validate()?;
    Ok(set)
}

fn overlap_score(vocab: &ConceptVocabulary, label: &BTreeSet<String>, prompt: &str) -> usize {
    vocab
        .concepts_in(prompt)
        .iter()
        .filter(|c| label.contains(*c))
        .count()
}

/// Splits a pool into the 7 prompts a label most and least entails, scoring
/// entailment by shared-concept count. Ties break lexicographically, then by
/// position.
pub fn pair_by_entailment(
    vocab: &ConceptVocabulary,
    label: &str,
    pool: &[String],
) -> Result<(Vec<String>, Vec<String>), EvalError> {
    let needed = 2 * PROMPTS_PER_SIDE;
    if pool.len() < needed {
        return Err(EvalError::PoolTooSmall {
            needed,
            got: pool.len(),
        });
    }
    let concepts: BTreeSet<String> = vocab.concepts_in(label).into_iter().collect();
    let mut order: Vec<(usize, usize)> = pool
        .iter()
        .enumerate()
        .map(|(i, p)| (overlap_score(vocab, &concepts, p), i))
        .collect();
    order.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then_with(|| pool[a.1].cmp(&pool[b.1]))
            .then_with(|| a.1.cmp(&b.1))
    });
    let most: Vec<usize> = order[..PROMPTS_PER_SIDE].iter().map(|o| o.1).collect();
    let least: Vec<usize> = order[order.len() - PROMPTS_PER_SIDE..]
        .iter()
        .rev()
        .map(|o| o.1)
        .collect();
    if most.iter().any(|i| least.contains(i)) {
        return Err(EvalError::PairingError);
    }
    let pick = |ix: &[usize]| ix.iter().map(|i| pool[*i].clone()).collect();
    Ok((pick(&most), pick(&least)))
}

/// Fraction of ground-truth concepts named by the report's labels.
pub fn ground_truth_agreement(
    vocab: &ConceptVocabulary,
    spec: &SyntheticNeuronSpec,
    report: &FinalReport,
) -> f64 {
    if !report.parse_ok {
        return 0.0;
    }
    let named: BTreeSet<String> = report
        .labels
        .iter()
        .flat_map(|l| vocab.concepts_in(l))
        .collect();
    let truth = spec.concepts();
    let matched = truth
        .iter()
        .filter(|c| {
            let canonical = vocab.normalize(c).unwrap_or(c);
            named.contains(canonical)
        })
        .count();
    matched as f64 / truth.len() as f64
}

/// Sum and count so partial results merge in any order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanAccumulator {
    pub sum: f64,
    pub count: u64,
    /// Observations that could not be produced (failed generations).
    pub missing: u64,
}

impl MeanAccumulator {
    pub fn push(&mut self, value: f64) {
        self.sum += value;
        self.count += 1;
    }

    pub fn push_missing(&mut self) {
        self.missing += 1;
    }

    pub fn merge(&mut self, other: &MeanAccumulator) {
        self.sum += other.sum;
        self.count += other.count;
        self.missing += other.missing;
    }

    pub fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

/// One `(method, layer)` row of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub layer: String,
    pub units: usize,
    pub positive: MeanAccumulator,
    pub neutral: MeanAccumulator,
}

impl EvalRow {
    pub fn new(method: &str, layer: &str) -> Self {
        Self {
            method: method.to_string(),
            layer: layer.to_string(),
            units: 0,
            positive: MeanAccumulator::default(),
            neutral: MeanAccumulator::default(),
        }
    }

    pub fn merge(&mut self, other: &EvalRow) {
        self.units += other.units;
        self.positive.merge(&other.positive);
        self.neutral.merge(&other.neutral);
    }

    pub fn key(&self) -> String {
        format!("{}/{}", self.method, self.layer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::{parse_final, ReportKind};

    fn vocab() -> ConceptVocabulary {
        ConceptVocabulary::table_default()
    }

    #[test]
    fn frames_carry_no_concepts() {
        let v = vocab();
        for f in FRAMES {
            assert!(v.concepts_in(&f.replace("{}", "")).is_empty(), "{f}");
        }
    }

    #[test]
    fn stripes_prompts() {
        let v = vocab();
        let set = generate_eval_prompts(&v, "stripes").unwrap();
        assert!(set.positive_prompts.iter().all(|p| p.contains("stripes")));
        for p in &set.neutral_prompts {
            assert!(!v.concepts_in(p).iter().any(|c| c == "stripes"), "{p}");
            for (syn, target) in v.synonyms() {
                if target == "stripes" {
                    assert!(!v.concepts_in(p).contains(syn));
                }
            }
        }
        let unique: BTreeSet<_> = set.neutral_prompts.iter().collect();
        assert_eq!(unique.len(), PROMPTS_PER_SIDE);
    }

    #[test]
    fn masks_prompts_mention_masks() {
        let set = generate_eval_prompts(&vocab(), "intricate masks").unwrap();
        assert_eq!(set.positive_prompts[0], "a photo of intricate masks");
    }

    #[test]
    fn disjunction_rotates() {
        let set = generate_eval_prompts(&vocab(), "train OR instrument").unwrap();
        assert_eq!(set.positive_prompts[0], "a photo of train");
        assert_eq!(set.positive_prompts[1], "a close-up picture of instrument");
    }

    #[test]
    fn empty_description() {
        assert_eq!(
            generate_eval_prompts(&vocab(), "  "),
            Err(EvalError::EmptyDescription)
        );
    }

    #[test]
    fn pairing_recovers_positives() {
        let v = vocab();
        let set = generate_eval_prompts(&v, "stripes").unwrap();
        let mut pool = set.neutral_prompts.clone();
        pool.extend(set.positive_prompts.clone());
        let (most, least) = pair_by_entailment(&v, "stripes", &pool).unwrap();
        let most: BTreeSet<_> = most.into_iter().collect();
        let expected: BTreeSet<_> = set.positive_prompts.into_iter().collect();
        assert_eq!(most, expected);
        let least: BTreeSet<_> = least.into_iter().collect();
        assert_eq!(least, set.neutral_prompts.into_iter().collect());
    }

    #[test]
    fn pairing_identical_pool_is_disjoint_by_position() {
        let pool = alloc::vec!["same".to_string(); 14];
        let (most, least) = pair_by_entailment(&vocab(), "dog", &pool).unwrap();
        assert_eq!(most.len(), 7);
        assert_eq!(least.len(), 7);
        let short = alloc::vec!["x".to_string(); 10];
        assert!(matches!(
            pair_by_entailment(&vocab(), "dog", &short),
            Err(EvalError::PoolTooSmall { .. })
        ));
    }

    #[test]
    fn agreement_scores() {
        let v = vocab();
        let tail = SyntheticNeuronSpec::monosemantic("tail");
        let r = parse_final(
            "[DESCRIPTION]: tails\n[LABEL]: fluffy animal tails",
            ReportKind::NeuronDescription,
        );
        assert_eq!(ground_truth_agreement(&v, &tail, &r), 1.0);
        let poly = SyntheticNeuronSpec::polysemantic("trains", "instruments");
        let r = parse_final(
            "[DESCRIPTION]: trains\n[LABEL]: trains",
            ReportKind::NeuronDescription,
        );
        assert_eq!(ground_truth_agreement(&v, &poly, &r), 0.5);
        let bad = parse_final("nothing", ReportKind::NeuronDescription);
        assert_eq!(ground_truth_agreement(&v, &tail, &bad), 0.0);
    }

    #[test]
    fn accumulator_merge_is_order_free() {
        let mut a = MeanAccumulator::default();
        a.push(1.0);
        a.push(2.0);
        let mut b = MeanAccumulator::default();
        b.push(6.0);
        b.push_missing();
        let mut ab = a;
        ab.merge(&b);
        let mut ba = b;
        ba.merge(&a);
        assert_eq!(ab, ba);
        assert_eq!(ab.mean(), Some(3.0));
        assert_eq!(ab.missing, 1);
    }
}
