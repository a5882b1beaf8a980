//! The symbolic scene world: images whose content is a list of concept
//! regions. Generation, editing, rendering and captioning are pure functions
//! of their inputs.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::hash;
use crate::raster::{BinaryMask, PixelBuffer};
use crate::vocab::{tokens, ConceptVocabulary};

pub const DEFAULT_RESOLUTION: Resolution = Resolution(224, 224);
pub const DEFAULT_MAX_REGIONS: usize = 8;
pub const DEFAULT_PROMPT_CAP: usize = 512;
pub const BASE_CONFIDENCE: f64 = 0.9;
pub const CONFIDENCE_JITTER: f64 = 0.05;
pub const NO_CONCEPTS_CAPTION: &str = "no recognizable concepts";
pub const NO_SHARED_CONCEPT: &str = "no shared concept";

/// First words that mark an edit as a removal.
pub const NEGATIVE_EDIT_VERBS: &[&str] = &["remove", "delete", "erase"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("invalid box ({0}, {1}, {2}, {3})")]
    InvalidBox(f64, f64, f64, f64),
    #[error("confidence {0} outside [0, 1]")]
    InvalidConfidence(f64),
    #[error("negative edit rejected: `{0}`; phrase edits as replacements")]
    NegativeEditRejected(String),
    #[error("edit target `{0}` is not present in the scene")]
    EditTargetMissing(String),
    #[error("cannot parse edit instruction `{0}`")]
    EditGrammarError(String),
    #[error("scene already holds the maximum of {0} regions")]
    TooManyRegions(usize),
    #[error("mask is {mask_w}x{mask_h} but the scene is {scene_w}x{scene_h}")]
    MaskShapeError {
        mask_w: u32,
        mask_h: u32,
        scene_w: u32,
        scene_h: u32,
    },
    #[error("at least {needed} images are required, got {got}")]
    InsufficientInput { needed: usize, got: usize },
}

/// Normalized rectangle `(x0, y0, x1, y1)` in the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct NormBox([f64; 4]);

impl NormBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, SceneError> {
        let ok = (0.0..=1.0).contains(&x0)
            && (0.0..=1.0).contains(&y0)
            && x1 <= 1.0
            && y1 <= 1.0
            && x0 < x1
            && y0 < y1;
        if ok {
            Ok(Self([x0, y0, x1, y1]))
        } else {
            Err(SceneError::InvalidBox(x0, y0, x1, y1))
        }
    }

    pub fn x0(&self) -> f64 {
        self.0[0]
    }
    pub fn y0(&self) -> f64 {
        self.0[1]
    }
    pub fn x1(&self) -> f64 {
        self.0[2]
    }
    pub fn y1(&self) -> f64 {
        self.0[3]
    }

    pub fn area(&self) -> f64 {
        (self.x1() - self.x0()) * (self.y1() - self.y0())
    }

    pub fn intersection_area(&self, other: &NormBox) -> f64 {
        let w = self.x1().min(other.x1()) - self.x0().max(other.x0());
        let h = self.y1().min(other.y1()) - self.y0().max(other.y0());
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

impl TryFrom<[f64; 4]> for NormBox {
    type Error = SceneError;
    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        NormBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<NormBox> for [f64; 4] {
    fn from(b: NormBox) -> Self {
        b.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptRegion {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: NormBox,
    pub confidence: f64,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

impl ConceptRegion {
    pub fn new(label: &str, bbox: NormBox, confidence: f64) -> Result<Self, SceneError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(SceneError::InvalidConfidence(confidence));
        }
        Ok(Self {
            label: label.to_string(),
            bbox,
            confidence,
            attributes: BTreeMap::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Generated,
    Edited,
    Dataset,
}

/// `(width, height)` in pixels; serialized as `[w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution(pub u32, pub u32);

impl Resolution {
    pub fn width(&self) -> u32 {
        self.0
    }
    pub fn height(&self) -> u32 {
        self.1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneImage {
    pub image_id: String,
    pub resolution: Resolution,
    pub regions: Vec<ConceptRegion>,
    pub provenance: Provenance,
    #[serde(default)]
    pub source_prompt: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub resolution: Resolution,
    pub max_regions: usize,
    pub prompt_cap: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            max_regions: DEFAULT_MAX_REGIONS,
            prompt_cap: DEFAULT_PROMPT_CAP,
        }
    }
}

/// Confidence and box placement for `label` in image `image_id`.
fn place_region(image_id: &str, label: &str) -> ConceptRegion {
    let d = hash::digest_str(&[image_id, label]);
    let confidence =
        BASE_CONFIDENCE + (hash::unit_interval(&d, 0) * 2.0 - 1.0) * CONFIDENCE_JITTER;
    let w = 0.2 + 0.3 * hash::unit_interval(&d, 8);
    let h = 0.2 + 0.3 * hash::unit_interval(&d, 16);
    let d2 = hash::digest(&[&d]);
    let x0 = hash::unit_interval(&d2, 0) * (1.0 - w);
    let y0 = hash::unit_interval(&d2, 8) * (1.0 - h);
    let bbox = NormBox::new(x0, y0, x0 + w, y0 + h).expect("placement stays in the unit square");
    ConceptRegion {
        label: label.to_string(),
        bbox,
        confidence,
        attributes: BTreeMap::new(),
    }
}

pub fn generate_scene(
    vocab: &ConceptVocabulary,
    prompt: &str,
    seed: u64,
    config: &SceneConfig,
) -> Result<SceneImage, SceneError> {
    if prompt.trim().is_empty() {
        return Err(SceneError::InvalidPrompt("prompt is empty".into()));
    }
    let chars = prompt.chars().count();
    if chars > config.prompt_cap {
        return Err(SceneError::InvalidPrompt(format!(
            "prompt has {chars} characters, cap is {}",
            config.prompt_cap
        )));
    }
    let image_id = hash::short_hex(&hash::digest_str(&[
        "generate",
        prompt,
        &seed.to_string(),
    ]));
    let regions = vocab
        .concepts_in(prompt)
        .iter()
        .take(config.max_regions)
        .map(|label| place_region(&image_id, label))
        .collect();
    Ok(SceneImage {
        image_id,
        resolution: config.resolution,
        regions,
        provenance: Provenance::Generated,
        source_prompt: prompt.to_string(),
    })
}

/// Builds a dataset scene from an explicit concept list, placing regions with
/// the same rule as generated scenes.
pub fn dataset_scene(image_id: &str, labels: &[&str], resolution: Resolution) -> SceneImage {
    SceneImage {
        image_id: image_id.to_string(),
        resolution,
        regions: labels.iter().map(|l| place_region(image_id, l)).collect(),
        provenance: Provenance::Dataset,
        source_prompt: String::new(),
    }
}

pub fn is_negative_edit(instruction: &str) -> bool {
    tokens(instruction)
        .first()
        .is_some_and(|w| NEGATIVE_EDIT_VERBS.contains(&w.as_str()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum EditOp {
    Replace { target: String, with: String },
    Recolor { target: String, color: String },
    Add { what: String },
}

fn strip_article(words: &[String]) -> &[String] {
    match words.first().map(String::as_str) {
        Some("the" | "a" | "an" | "some") => &words[1..],
        _ => words,
    }
}

fn parse_edit(instruction: &str) -> Option<EditOp> {
    let words = tokens(instruction);
    let split_on = |rest: &[String], sep: &str| -> Option<(String, String)> {
        let at = rest.iter().position(|w| w == sep)?;
        let left = strip_article(&rest[..at]);
        let right = strip_article(&rest[at + 1..]);
        (!left.is_empty() && !right.is_empty()).then(|| (left.join(" "), right.join(" ")))
    };
    match words.first().map(String::as_str)? {
        "replace" => {
            let (target, with) = split_on(&words[1..], "with")?;
            Some(EditOp::Replace { target, with })
        }
        "change" => {
            let rest = &words[1..];
            let prefix_len = match rest {
                [a, c, o, ..] if a == "the" && (c == "color" || c == "colour") && o == "of" => 3,
                _ => return None,
            };
            let (target, color) = split_on(&rest[prefix_len..], "to")?;
            Some(EditOp::Recolor { target, color })
        }
        "add" => {
            let what = strip_article(&words[1..]);
            (!what.is_empty()).then(|| EditOp::Add {
                what: what.join(" "),
            })
        }
        _ => None,
    }
}

/// Canonical label for an edit phrase: the first vocabulary concept it
/// mentions, else the raw phrase (an out-of-vocabulary region that
/// detectors ignore).
fn resolve_phrase(vocab: &ConceptVocabulary, phrase: &str) -> String {
    vocab
        .concepts_in(phrase)
        .into_iter()
        .next()
        .unwrap_or_else(|| phrase.to_string())
}

fn find_target(vocab: &ConceptVocabulary, scene: &SceneImage, phrase: &str) -> Option<usize> {
    let wanted = resolve_phrase(vocab, phrase);
    scene
        .regions
        .iter()
        .position(|r| vocab.normalize(&r.label).unwrap_or(&r.label) == wanted)
}

/// Applies one instruction from the closed edit grammar:
/// `replace X with Y`, `change the color of X to C`, `add Y`.
pub fn edit_scene(
    vocab: &ConceptVocabulary,
    scene: &SceneImage,
    instruction: &str,
    max_regions: usize,
) -> Result<SceneImage, SceneError> {
    if is_negative_edit(instruction) {
        return Err(SceneError::NegativeEditRejected(instruction.to_string()));
    }
    let op = parse_edit(instruction)
        .ok_or_else(|| SceneError::EditGrammarError(instruction.to_string()))?;
    let image_id = hash::short_hex(&hash::digest_str(&["edit", &scene.image_id, instruction]));
    let mut regions = scene.regions.clone();
    match op {
        EditOp::Replace { target, with } => {
            let i = find_target(vocab, scene, &target)
                .ok_or(SceneError::EditTargetMissing(target))?;
            regions[i].label = resolve_phrase(vocab, &with);
        }
        EditOp::Recolor { target, color } => {
            let i = find_target(vocab, scene, &target)
                .ok_or(SceneError::EditTargetMissing(target))?;
            regions[i].attributes.insert("color".into(), color);
        }
        EditOp::Add { what } => {
            if regions.len() >= max_regions {
                return Err(SceneError::TooManyRegions(max_regions));
            }
            let label = resolve_phrase(vocab, &what);
            regions.push(place_region(&image_id, &label));
        }
    }
    Ok(SceneImage {
        image_id,
        resolution: scene.resolution,
        regions,
        provenance: Provenance::Edited,
        source_prompt: scene.source_prompt.clone(),
    })
}

const BACKGROUND: [u8; 3] = [48, 48, 48];

fn named_color(name: &str) -> Option<[u8; 3]> {
    Some(match name {
        "red" => [220, 30, 30],
        "green" => [30, 170, 60],
        "blue" => [40, 70, 220],
        "yellow" => [235, 215, 40],
        "orange" => [240, 140, 20],
        "purple" => [130, 50, 170],
        "pink" => [240, 130, 180],
        "black" => [10, 10, 10],
        "white" => [245, 245, 245],
        "gray" | "grey" => [128, 128, 128],
        "brown" => [120, 75, 35],
        _ => return None,
    })
}

fn region_color(region: &ConceptRegion) -> [u8; 3] {
    let d = hash::digest_str(&["color", &region.label]);
    let base = [64 + d[0] / 2, 64 + d[1] / 2, 64 + d[2] / 2];
    match region.attributes.get("color") {
        None => base,
        Some(name) => {
            let tint = named_color(name).unwrap_or_else(|| {
                let t = hash::digest_str(&["tint", name]);
                [t[0], t[1], t[2]]
            });
            // 3:1 blend toward the attribute color
            [0, 1, 2].map(|i| ((base[i] as u16 + 3 * tint[i] as u16) / 4) as u8)
        }
    }
}

/// Rasterizes regions in order as filled rectangles on a uniform background.
/// Depends on resolution and regions only.
pub fn render(scene: &SceneImage) -> PixelBuffer {
    let (w, h) = (scene.resolution.width(), scene.resolution.height());
    let mut px = PixelBuffer::filled(w, h, BACKGROUND);
    for region in &scene.regions {
        let color = region_color(region);
        for (x, y) in BinaryMask::box_pixels(&region.bbox, w, h) {
            px.set_pixel(x, y, color);
        }
    }
    px
}

fn check_mask(scene: &SceneImage, mask: Option<&BinaryMask>) -> Result<(), SceneError> {
    if let Some(m) = mask {
        if m.width() != scene.resolution.width() || m.height() != scene.resolution.height() {
            return Err(SceneError::MaskShapeError {
                mask_w: m.width(),
                mask_h: m.height(),
                scene_w: scene.resolution.width(),
                scene_h: scene.resolution.height(),
            });
        }
    }
    Ok(())
}

/// Fraction of a region's pixels that fall inside the mask.
pub fn region_mask_overlap(region: &ConceptRegion, mask: &BinaryMask) -> f64 {
    let pixels = BinaryMask::box_pixels(&region.bbox, mask.width(), mask.height());
    if pixels.is_empty() {
        return 0.0;
    }
    let inside = pixels.iter().filter(|(x, y)| mask.get(*x, *y)).count();
    inside as f64 / pixels.len() as f64
}

/// Sorted canonical labels of regions at least half inside the mask (every
/// known region when there is no mask).
pub fn caption_labels(
    vocab: &ConceptVocabulary,
    scene: &SceneImage,
    mask: Option<&BinaryMask>,
) -> Result<BTreeSet<String>, SceneError> {
    check_mask(scene, mask)?;
    Ok(scene
        .regions
        .iter()
        .filter(|r| mask.is_none_or(|m| region_mask_overlap(r, m) >= 0.5))
        .filter_map(|r| vocab.normalize(&r.label))
        .map(ToString::to_string)
        .collect())
}

fn join_labels(labels: &BTreeSet<String>, empty: &str) -> String {
    if labels.is_empty() {
        empty.to_string()
    } else {
        labels.iter().map(String::as_str).collect::<Vec<_>>().join(", ")
    }
}

pub fn caption_regions(
    vocab: &ConceptVocabulary,
    scene: &SceneImage,
    mask: Option<&BinaryMask>,
) -> Result<String, SceneError> {
    Ok(join_labels(
        &caption_labels(vocab, scene, mask)?,
        NO_CONCEPTS_CAPTION,
    ))
}

/// Concepts captioned in every scene.
pub fn common_labels(
    vocab: &ConceptVocabulary,
    scenes: &[(&SceneImage, Option<&BinaryMask>)],
) -> Result<BTreeSet<String>, SceneError> {
    if scenes.len() < 2 {
        return Err(SceneError::InsufficientInput {
            needed: 2,
            got: scenes.len(),
        });
    }
    let mut common: Option<BTreeSet<String>> = None;
    for (scene, mask) in scenes {
        let labels = caption_labels(vocab, scene, *mask)?;
        common = Some(match common {
            None => labels,
            Some(c) => c.intersection(&labels).cloned().collect(),
        });
    }
    Ok(common.unwrap_or_default())
}

pub fn summarize_common(
    vocab: &ConceptVocabulary,
    scenes: &[(&SceneImage, Option<&BinaryMask>)],
) -> Result<String, SceneError> {
    Ok(join_labels(&common_labels(vocab, scenes)?, NO_SHARED_CONCEPT))
}
