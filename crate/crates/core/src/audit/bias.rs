//! Classifier output unit with a planted context dependence: its class
//! probability is high only when a given context concept co-occurs.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::hash;
use crate::neuron::{
    detect_regions, ActivationResult, DetectionThresholds, DisplayRounding, NeuronError,
};
use crate::raster::BinaryMask;
use crate::scene::SceneImage;
use crate::vocab::ConceptVocabulary;

pub const BIAS_CLASSES: [&str; 6] = ["flute", "piano", "vase", "lamp", "cup", "chair"];

/// Contexts a planted bias is drawn from.
pub const BIAS_CONTEXTS: [&str; 10] = [
    "hand", "people", "stage", "table", "grass", "water", "snow", "road", "tree", "wood",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedBiasSpec {
    pub class_concept: String,
    /// `None` plants no bias: every class image scores alike.
    pub context: Option<String>,
    /// Class probability without the context.
    pub base: f64,
    /// Class probability with the context.
    pub boosted: f64,
    /// Probability when the class itself is absent.
    pub absent: f64,
    /// Amplitude of the per-image hash jitter.
    pub jitter: f64,
    pub seed: u64,
    pub thresholds: DetectionThresholds,
}

impl PlantedBiasSpec {
    pub fn new(class_concept: &str, context: Option<&str>, seed: u64) -> Self {
        Self {
            class_concept: class_concept.to_string(),
            context: context.map(str::to_string),
            base: 0.3,
            boosted: 0.9,
            absent: 0.02,
            jitter: 0.02,
            seed,
            thresholds: DetectionThresholds::default(),
        }
    }

    /// Class and context picked from the built-in lists by hashing the seed.
    pub fn for_seed(seed: u64) -> Self {
        let d = hash::digest_str(&["planted-bias", &seed.to_string()]);
        let class = BIAS_CLASSES[(hash::seed_u64(&d) % BIAS_CLASSES.len() as u64) as usize];
        let ctx = BIAS_CONTEXTS[(hash::seed_u64(&hash::digest(&[&d])) % BIAS_CONTEXTS.len() as u64)
            as usize];
        Self::new(class, Some(ctx), seed)
    }

    pub fn respond(
        &self,
        vocab: &ConceptVocabulary,
        scene: &SceneImage,
    ) -> Result<ActivationResult, NeuronError> {
        let (w, h) = (scene.resolution.width(), scene.resolution.height());
        let Some(class) = detect_regions(vocab, scene, &self.class_concept, &self.thresholds)?
        else {
            return Ok(ActivationResult::new(
                self.absent,
                BinaryMask::empty(w, h),
                DisplayRounding::TwoDecimals,
            ));
        };
        let with_context = match &self.context {
            Some(c) => detect_regions(vocab, scene, c, &self.thresholds)?.is_some(),
            None => true,
        };
        let level = if with_context { self.boosted } else { self.base };
        let d = hash::digest_str(&["bias-jitter", &scene.image_id, &self.seed.to_string()]);
        let p = (level + (hash::unit_interval(&d, 0) * 2.0 - 1.0) * self.jitter).clamp(0.0, 1.0);
        let boxes: Vec<_> = class.regions.iter().map(|i| scene.regions[*i].bbox).collect();
        let mask = BinaryMask::from_boxes_dilated(w, h, &boxes, self.thresholds.dilation_radius);
        Ok(ActivationResult::new(p, mask, DisplayRounding::TwoDecimals))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{dataset_scene, DEFAULT_RESOLUTION};

    #[test]
    fn lists_are_in_vocabulary() {
        let v = ConceptVocabulary::table_default();
        for c in BIAS_CLASSES.iter().chain(&BIAS_CONTEXTS) {
            assert!(v.is_canonical(c), "{c}");
        }
    }

    #[test]
    fn context_raises_probability() {
        let v = ConceptVocabulary::table_default();
        let spec = PlantedBiasSpec::new("flute", Some("hand"), 1);
        let alone = dataset_scene("a", &["flute"], DEFAULT_RESOLUTION);
        let held = dataset_scene("b", &["flute", "hand"], DEFAULT_RESOLUTION);
        let none = dataset_scene("c", &["hand"], DEFAULT_RESOLUTION);
        let pa = spec.respond(&v, &alone).unwrap().activation;
        let ph = spec.respond(&v, &held).unwrap().activation;
        let pn = spec.respond(&v, &none).unwrap();
        assert!(ph > pa + 0.5);
        assert!(!pn.fired());
    }

    #[test]
    fn seeds_vary() {
        let picks: alloc::collections::BTreeSet<_> = (0..10)
            .map(|s| PlantedBiasSpec::for_seed(s).context.unwrap())
            .collect();
        assert!(picks.len() > 1);
    }
}
