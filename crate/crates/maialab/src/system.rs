//! Probeable units: synthetic neurons over scenes, planted audit units and
//! adapters for pixel models.

use std::sync::Arc;

use maialab_core::audit::{FeatureRole, PlantedBiasSpec, PlantedFeatureProbe};
use maialab_core::neuron::{synthetic_activation, synthetic_response, NeuronError};
use maialab_core::{ActivationResult, ConceptVocabulary, NeuronAddress, SceneImage, SyntheticNeuronSpec};

use crate::adapter::{AdapterError, ModelRegistry};
use crate::image::Image;

#[derive(Debug, thiserror::Error)]
pub enum SystemError {
    #[error("InsufficientInput: probe needs at least one image")]
    InsufficientInput,
    #[error("BackendError: image {index}: {message}")]
    BackendError { index: usize, message: String },
}

/// A unit that maps images to activations and evidence masks.
pub trait System: Send + Sync {
    fn address(&self) -> &NeuronAddress;

    /// One result per image, in input order.
    fn probe(&self, images: &[Image]) -> Result<Vec<ActivationResult>, SystemError>;

    /// Activations only. Exemplar indexing calls this over whole datasets,
    /// so backends that can skip mask construction should override it.
    fn score(&self, images: &[Image]) -> Result<Vec<f64>, SystemError> {
        Ok(self.probe(images)?.into_iter().map(|r| r.activation).collect())
    }
}

/// Masked copies of `images` carrying each result's evidence.
pub fn masked_images(images: &[Image], results: &[ActivationResult]) -> Vec<Image> {
    images
        .iter()
        .zip(results)
        .map(|(img, r)| img.with_mask(r.evidence.clone()))
        .collect()
}

fn scene_at(images: &[Image], index: usize) -> Result<&SceneImage, SystemError> {
    images[index].as_scene().ok_or_else(|| SystemError::BackendError {
        index,
        message: "this unit reads symbolic scenes; got a raw pixel buffer".into(),
    })
}

fn probe_scenes(
    images: &[Image],
    mut f: impl FnMut(&SceneImage) -> Result<ActivationResult, NeuronError>,
) -> Result<Vec<ActivationResult>, SystemError> {
    if images.is_empty() {
        return Err(SystemError::InsufficientInput);
    }
    (0..images.len())
        .map(|i| {
            f(scene_at(images, i)?).map_err(|e| SystemError::BackendError {
                index: i,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Ground-truth neuron from the synthetic roster.
#[derive(Debug, Clone)]
pub struct SyntheticSystem {
    address: NeuronAddress,
    pub spec: SyntheticNeuronSpec,
    vocab: Arc<ConceptVocabulary>,
}

impl SyntheticSystem {
    pub fn new(address: NeuronAddress, spec: SyntheticNeuronSpec, vocab: Arc<ConceptVocabulary>) -> Self {
        Self { address, spec, vocab }
    }
}

impl System for SyntheticSystem {
    fn address(&self) -> &NeuronAddress {
        &self.address
    }

    fn probe(&self, images: &[Image]) -> Result<Vec<ActivationResult>, SystemError> {
        probe_scenes(images, |s| synthetic_activation(&self.vocab, &self.spec, s))
    }

    fn score(&self, images: &[Image]) -> Result<Vec<f64>, SystemError> {
        if images.is_empty() {
            return Err(SystemError::InsufficientInput);
        }
        (0..images.len())
            .map(|i| {
                synthetic_response(&self.vocab, &self.spec, scene_at(images, i)?)
                    .map(|(a, _)| a)
                    .map_err(|e| SystemError::BackendError {
                        index: i,
                        message: e.to_string(),
                    })
            })
            .collect()
    }
}

/// One column of the planted final layer, addressed `planted:final:<column>`.
#[derive(Debug, Clone)]
pub struct PlantedFeatureSystem {
    address: NeuronAddress,
    probe: PlantedFeatureProbe,
    vocab: Arc<ConceptVocabulary>,
}

impl PlantedFeatureSystem {
    pub fn new(column: usize, role: FeatureRole, vocab: Arc<ConceptVocabulary>) -> Self {
        Self {
            address: NeuronAddress::new("planted", "final", column as u32).expect("static address"),
            probe: PlantedFeatureProbe::new(role),
            vocab,
        }
    }
}

impl System for PlantedFeatureSystem {
    fn address(&self) -> &NeuronAddress {
        &self.address
    }

    fn probe(&self, images: &[Image]) -> Result<Vec<ActivationResult>, SystemError> {
        probe_scenes(images, |s| self.probe.respond(&self.vocab, s))
    }
}

/// Class-probability output of the planted biased classifier.
#[derive(Debug, Clone)]
pub struct PlantedBiasSystem {
    address: NeuronAddress,
    pub spec: PlantedBiasSpec,
    vocab: Arc<ConceptVocabulary>,
}

impl PlantedBiasSystem {
    pub fn new(spec: PlantedBiasSpec, vocab: Arc<ConceptVocabulary>) -> Self {
        let layer = spec.class_concept.replace(' ', "_");
        Self {
            address: NeuronAddress::new("planted_bias", &layer, 0).expect("class names have no colons"),
            spec,
            vocab,
        }
    }
}

impl System for PlantedBiasSystem {
    fn address(&self) -> &NeuronAddress {
        &self.address
    }

    fn probe(&self, images: &[Image]) -> Result<Vec<ActivationResult>, SystemError> {
        probe_scenes(images, |s| self.spec.respond(&self.vocab, s))
    }
}

/// A channel of a registered pixel model.
pub struct RealModelSystem {
    address: NeuronAddress,
    registry: Arc<ModelRegistry>,
}

impl RealModelSystem {
    /// Fails with `AddressError` unless the registry knows the model, layer
    /// and unit.
    pub fn register(registry: Arc<ModelRegistry>, address: NeuronAddress) -> Result<Self, AdapterError> {
        registry.check_address(&address)?;
        Ok(Self { address, registry })
    }
}

impl System for RealModelSystem {
    fn address(&self) -> &NeuronAddress {
        &self.address
    }

    fn probe(&self, images: &[Image]) -> Result<Vec<ActivationResult>, SystemError> {
        if images.is_empty() {
            return Err(SystemError::InsufficientInput);
        }
        images
            .iter()
            .enumerate()
            .map(|(i, img)| {
                self.registry
                    .probe_unit(&self.address, &img.base_raster())
                    .map_err(|e| SystemError::BackendError {
                        index: i,
                        message: e.to_string(),
                    })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use maialab_core::scene::{dataset_scene, DEFAULT_RESOLUTION};

    fn vocab() -> Arc<ConceptVocabulary> {
        Arc::new(ConceptVocabulary::table_default())
    }

    #[test]
    fn synthetic_probe_preserves_order_and_matches_score() {
        let sys = SyntheticSystem::new(
            NeuronAddress::synthetic(0),
            SyntheticNeuronSpec::monosemantic("stripes"),
            vocab(),
        );
        let imgs = vec![
            Image::scene(dataset_scene("a", &["stripes"], DEFAULT_RESOLUTION)),
            Image::scene(dataset_scene("b", &["dog"], DEFAULT_RESOLUTION)),
        ];
        let r = sys.probe(&imgs).unwrap();
        assert!(r[0].activation > 0.8 && r[0].fired());
        assert_eq!(r[1].activation, 0.0);
        assert!(!r[1].fired());
        let s = sys.score(&imgs).unwrap();
        assert_eq!(s, vec![r[0].activation, r[1].activation]);
    }

    #[test]
    fn empty_probe_is_rejected() {
        let sys = PlantedBiasSystem::new(PlantedBiasSpec::for_seed(0), vocab());
        assert!(matches!(sys.probe(&[]), Err(SystemError::InsufficientInput)));
    }

    #[test]
    fn pixel_input_to_scene_unit_names_the_image() {
        let sys = PlantedFeatureSystem::new(0, FeatureRole::Noise, vocab());
        let imgs = vec![
            Image::scene(dataset_scene("a", &["dog"], DEFAULT_RESOLUTION)),
            Image::pixels(maialab_core::PixelBuffer::filled(4, 4, [0, 0, 0])),
        ];
        match sys.probe(&imgs) {
            Err(SystemError::BackendError { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
    }
}
