//! Neuron addressing and synthetic ground-truth neurons over scenes.
//!
//! A synthetic neuron fires through a concept detector: a region counts as a
//! detection of concept `c` when its normalized label is `c`, its confidence
//! clears the text threshold and its box covers at least
//! `box_threshold / 100` of the image. Detections are turned into dilated
//! evidence masks, and the three neuron kinds compose them:
//!
//! * monosemantic: the detection of A;
//! * polysemantic (A OR B): the mean of both confidences with merged masks
//!   when both fire, otherwise whichever fired;
//! * conditional (A given B): the detection of A, only when B also fires.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::raster::BinaryMask;
use crate::scene::SceneImage;
use crate::vocab::ConceptVocabulary;

pub const DEFAULT_BOX_THRESHOLD: f64 = 0.3;
pub const DEFAULT_TEXT_THRESHOLD: f64 = 0.25;
pub const DEFAULT_DILATION_RADIUS: u32 = 3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NeuronError {
    #[error("unknown concept `{0}`")]
    UnknownConcept(String),
    #[error("malformed neuron address `{0}`; expected model:layer:unit")]
    AddressError(String),
    #[error("invalid synthetic neuron spec: {0}")]
    InvalidSpec(String),
}

/// `model:layer:unit`, e.g. `resnet152:layer4:122`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NeuronAddress {
    pub model_name: String,
    pub layer_id: String,
    pub unit_index: u32,
}

impl NeuronAddress {
    pub fn new(model_name: &str, layer_id: &str, unit_index: u32) -> Result<Self, NeuronError> {
        let bad = |s: &str| s.is_empty() || s.contains(':') || s.contains(char::is_whitespace);
        if bad(model_name) || bad(layer_id) {
            return Err(NeuronError::AddressError(format!(
                "{model_name}:{layer_id}:{unit_index}"
            )));
        }
        Ok(Self {
            model_name: model_name.to_string(),
            layer_id: layer_id.to_string(),
            unit_index,
        })
    }

    pub fn synthetic(unit_index: u32) -> Self {
        Self::new("synthetic", "table_a2", unit_index).expect("static address")
    }
}

impl fmt::Display for NeuronAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.model_name, self.layer_id, self.unit_index)
    }
}

impl FromStr for NeuronAddress {
    type Err = NeuronError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || NeuronError::AddressError(s.to_string());
        let mut parts = s.split(':');
        let (Some(model), Some(layer), Some(unit), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(err());
        };
        // reject "+1", " 1" and friends so the string form stays canonical
        if unit.is_empty() || !unit.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let unit = unit.parse().map_err(|_| err())?;
        let addr = Self::new(model, layer, unit).map_err(|_| err())?;
        if addr.to_string() != s {
            return Err(err());
        }
        Ok(addr)
    }
}

impl TryFrom<String> for NeuronAddress {
    type Error = NeuronError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<NeuronAddress> for String {
    fn from(a: NeuronAddress) -> Self {
        a.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeuronKind {
    Monosemantic,
    Polysemantic,
    Conditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectionThresholds {
    pub box_threshold: f64,
    pub text_threshold: f64,
    pub dilation_radius: u32,
}

impl Default for DetectionThresholds {
    fn default() -> Self {
        Self {
            box_threshold: DEFAULT_BOX_THRESHOLD,
            text_threshold: DEFAULT_TEXT_THRESHOLD,
            dilation_radius: DEFAULT_DILATION_RADIUS,
        }
    }
}

impl DetectionThresholds {
    /// Minimum box area as a fraction of the image.
    pub fn min_box_area(&self) -> f64 {
        self.box_threshold / 100.0
    }
}

fn default_box_threshold() -> f64 {
    DEFAULT_BOX_THRESHOLD
}
fn default_text_threshold() -> f64 {
    DEFAULT_TEXT_THRESHOLD
}
fn default_dilation() -> u32 {
    DEFAULT_DILATION_RADIUS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SpecFields {
    kind: NeuronKind,
    concept_a: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    concept_b: Option<String>,
    #[serde(default = "default_box_threshold")]
    box_threshold: f64,
    #[serde(default = "default_text_threshold")]
    text_threshold: f64,
    #[serde(default = "default_dilation")]
    dilation_radius: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecFields", into = "SpecFields")]
pub struct SyntheticNeuronSpec {
    pub kind: NeuronKind,
    pub concept_a: String,
    pub concept_b: Option<String>,
    pub thresholds: DetectionThresholds,
}

impl TryFrom<SpecFields> for SyntheticNeuronSpec {
    type Error = NeuronError;
    fn try_from(f: SpecFields) -> Result<Self, Self::Error> {
        let spec = SyntheticNeuronSpec {
            kind: f.kind,
            concept_a: f.concept_a,
            concept_b: f.concept_b,
            thresholds: DetectionThresholds {
                box_threshold: f.box_threshold,
                text_threshold: f.text_threshold,
                dilation_radius: f.dilation_radius,
            },
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<SyntheticNeuronSpec> for SpecFields {
    fn from(s: SyntheticNeuronSpec) -> Self {
        SpecFields {
            kind: s.kind,
            concept_a: s.concept_a,
            concept_b: s.concept_b,
            box_threshold: s.thresholds.box_threshold,
            text_threshold: s.thresholds.text_threshold,
            dilation_radius: s.thresholds.dilation_radius,
        }
    }
}

impl SyntheticNeuronSpec {
    pub fn monosemantic(concept: &str) -> Self {
        Self {
            kind: NeuronKind::Monosemantic,
            concept_a: concept.to_string(),
            concept_b: None,
            thresholds: DetectionThresholds::default(),
        }
    }

    pub fn polysemantic(a: &str, b: &str) -> Self {
        Self {
            kind: NeuronKind::Polysemantic,
            concept_a: a.to_string(),
            concept_b: Some(b.to_string()),
            thresholds: DetectionThresholds::default(),
        }
    }

    /// Fires for `a` only when `b` is also present.
    pub fn conditional(a: &str, b: &str) -> Self {
        Self {
            kind: NeuronKind::Conditional,
            concept_a: a.to_string(),
            concept_b: Some(b.to_string()),
            thresholds: DetectionThresholds::default(),
        }
    }

    pub fn validate(&self) -> Result<(), NeuronError> {
        let t = &self.thresholds;
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(t.box_threshold) || !in_unit(t.text_threshold) {
            return Err(NeuronError::InvalidSpec("thresholds must lie in (0, 1)".into()));
        }
        match (self.kind, &self.concept_b) {
            (NeuronKind::Monosemantic, Some(_)) => Err(NeuronError::InvalidSpec(
                "monosemantic neurons take a single concept".into(),
            )),
            (NeuronKind::Polysemantic | NeuronKind::Conditional, None) => Err(
                NeuronError::InvalidSpec("compound neurons need a second concept".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Roster name: `stripes`, `truck_or_train`, `dog_given_leash`.
    pub fn name(&self) -> String {
        let slug = |c: &str| c.replace(' ', "_");
        match (&self.kind, &self.concept_b) {
            (NeuronKind::Polysemantic, Some(b)) => {
                format!("{}_or_{}", slug(&self.concept_a), slug(b))
            }
            (NeuronKind::Conditional, Some(b)) => {
                format!("{}_given_{}", slug(&self.concept_a), slug(b))
            }
            _ => slug(&self.concept_a),
        }
    }

    /// Ground-truth concept set (one for monosemantic, two otherwise).
    pub fn concepts(&self) -> Vec<&str> {
        let mut out = alloc::vec![self.concept_a.as_str()];
        if let Some(b) = &self.concept_b {
            out.push(b.as_str());
        }
        out
    }

    /// Human-readable ground-truth label.
    pub fn label(&self) -> String {
        match (&self.kind, &self.concept_b) {
            (NeuronKind::Polysemantic, Some(b)) => format!("{} OR {}", self.concept_a, b),
            (NeuronKind::Conditional, Some(b)) => {
                format!("{} when {} is present", self.concept_a, b)
            }
            _ => self.concept_a.clone(),
        }
    }
}

/// How activations are rounded before being shown to an agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplayRounding {
    /// Two decimals: detector confidences in `[0, 1]`.
    TwoDecimals,
    /// Nearest integer: activations of trained units in model units.
    Integer,
}

impl DisplayRounding {
    pub fn apply(self, value: f64) -> f64 {
        match self {
            DisplayRounding::TwoDecimals => libm::round(value * 100.0) / 100.0,
            DisplayRounding::Integer => libm::round(value),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationResult {
    pub activation: f64,
    pub reported_activation: f64,
    /// Pixels that produced the activation; empty when nothing fired.
    pub evidence: BinaryMask,
    pub mask_coverage: f64,
}

impl ActivationResult {
    pub fn new(activation: f64, evidence: BinaryMask, rounding: DisplayRounding) -> Self {
        let mask_coverage = evidence.coverage();
        Self {
            activation,
            reported_activation: rounding.apply(activation),
            evidence,
            mask_coverage,
        }
    }

    pub fn silent(width: u32, height: u32) -> Self {
        Self::new(0.0, BinaryMask::empty(width, height), DisplayRounding::TwoDecimals)
    }

    pub fn fired(&self) -> bool {
        self.mask_coverage > 0.0
    }
}

/// Confidence and contributing region indices of one detection.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub confidence: f64,
    pub regions: Vec<usize>,
}

fn require_concept<'v>(vocab: &'v ConceptVocabulary, concept: &str) -> Result<&'v str, NeuronError> {
    vocab
        .normalize(concept)
        .ok_or_else(|| NeuronError::UnknownConcept(concept.to_string()))
}

/// Regions detected as `concept`, without rasterizing a mask.
pub fn detect_regions(
    vocab: &ConceptVocabulary,
    scene: &SceneImage,
    concept: &str,
    thresholds: &DetectionThresholds,
) -> Result<Option<Detection>, NeuronError> {
    let concept = require_concept(vocab, concept)?;
    let mut best: Option<Detection> = None;
    for (i, region) in scene.regions.iter().enumerate() {
        let qualifies = vocab.normalize(&region.label) == Some(concept)
            && region.confidence >= thresholds.text_threshold
            && region.bbox.area() >= thresholds.min_box_area();
        if !qualifies {
            continue;
        }
        match &mut best {
            None => {
                best = Some(Detection {
                    confidence: region.confidence,
                    regions: alloc::vec![i],
                })
            }
            Some(d) => {
                d.confidence = d.confidence.max(region.confidence);
                d.regions.push(i);
            }
        }
    }
    Ok(best)
}

fn evidence_mask(scene: &SceneImage, regions: &[usize], radius: u32) -> BinaryMask {
    let boxes: Vec<_> = regions.iter().map(|i| scene.regions[*i].bbox).collect();
    BinaryMask::from_boxes_dilated(
        scene.resolution.width(),
        scene.resolution.height(),
        &boxes,
        radius,
    )
}

/// Max qualifying confidence and the dilated union of qualifying boxes.
pub fn detect_concept(
    vocab: &ConceptVocabulary,
    scene: &SceneImage,
    concept: &str,
    thresholds: &DetectionThresholds,
) -> Result<Option<(f64, BinaryMask)>, NeuronError> {
    Ok(detect_regions(vocab, scene, concept, thresholds)?.map(|d| {
        let mask = evidence_mask(scene, &d.regions, thresholds.dilation_radius);
        (d.confidence, mask)
    }))
}

/// Activation and evidence region indices, without a mask. Returns
/// `(0.0, [])` when the neuron is silent.
pub fn synthetic_response(
    vocab: &ConceptVocabulary,
    spec: &SyntheticNeuronSpec,
    scene: &SceneImage,
) -> Result<(f64, Vec<usize>), NeuronError> {
    let t = &spec.thresholds;
    let a = detect_regions(vocab, scene, &spec.concept_a, t)?;
    let b = match &spec.concept_b {
        Some(b) => detect_regions(vocab, scene, b, t)?,
        None => None,
    };
    let silent = (0.0, Vec::new());
    Ok(match spec.kind {
        NeuronKind::Monosemantic => a.map_or(silent, |d| (d.confidence, d.regions)),
        NeuronKind::Polysemantic => match (a, b) {
            (Some(a), Some(b)) => {
                let mut regions = a.regions;
                regions.extend(b.regions);
                regions.sort_unstable();
                regions.dedup();
                ((a.confidence + b.confidence) / 2.0, regions)
            }
            (Some(d), None) | (None, Some(d)) => (d.confidence, d.regions),
            (None, None) => silent,
        },
        NeuronKind::Conditional => match (a, b) {
            (Some(a), Some(_)) => (a.confidence, a.regions),
            _ => silent,
        },
    })
}

pub fn synthetic_activation(
    vocab: &ConceptVocabulary,
    spec: &SyntheticNeuronSpec,
    scene: &SceneImage,
) -> Result<ActivationResult, NeuronError> {
    let (activation, regions) = synthetic_response(vocab, spec, scene)?;
    let mask = evidence_mask(scene, &regions, spec.thresholds.dilation_radius);
    Ok(ActivationResult::new(
        activation,
        mask,
        DisplayRounding::TwoDecimals,
    ))
}
