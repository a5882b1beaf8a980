//! Pluggable backends behind the generation, editing, description and
//! summarization tools, with per-client dispatch counters.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use maialab_core::scene::{
    caption_labels, caption_regions, edit_scene, generate_scene, SceneConfig, NO_SHARED_CONCEPT,
};
use maialab_core::ConceptVocabulary;
use serde::{Deserialize, Serialize};

use crate::image::Image;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct ClientError(pub String);

pub trait Generator: Send + Sync {
    /// One outcome per prompt, in order.
    fn generate(&self, prompts: &[String], seed: u64) -> Vec<Result<Image, ClientError>>;
}

pub trait Editor: Send + Sync {
    fn edit(&self, image: &Image, instruction: &str) -> Result<Image, ClientError>;
}

/// Describes one image (masked images are described by their evidence).
pub trait Describer: Send + Sync {
    fn describe(&self, image: &Image) -> Result<String, ClientError>;
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, images: &[Image]) -> Result<String, ClientError>;
}

pub struct SceneGenerator {
    vocab: Arc<ConceptVocabulary>,
    config: SceneConfig,
}

impl Generator for SceneGenerator {
    fn generate(&self, prompts: &[String], seed: u64) -> Vec<Result<Image, ClientError>> {
        prompts
            .iter()
            .map(|p| {
                generate_scene(&self.vocab, p, seed, &self.config)
                    .map(Image::scene)
                    .map_err(|e| ClientError(e.to_string()))
            })
            .collect()
    }
}

pub struct SceneEditor {
    vocab: Arc<ConceptVocabulary>,
    max_regions: usize,
}

impl Editor for SceneEditor {
    fn edit(&self, image: &Image, instruction: &str) -> Result<Image, ClientError> {
        let scene = image
            .as_scene()
            .ok_or_else(|| ClientError("scene editor cannot edit raw pixels".into()))?;
        edit_scene(&self.vocab, scene, instruction, self.max_regions)
            .map(Image::scene)
            .map_err(|e| ClientError(e.to_string()))
    }
}

/// Captions the regions at least half inside the mask. Holds no state
/// between calls, so every description is history independent.
pub struct CaptionDescriber {
    vocab: Arc<ConceptVocabulary>,
}

impl Describer for CaptionDescriber {
    fn describe(&self, image: &Image) -> Result<String, ClientError> {
        let scene = image
            .as_scene()
            .ok_or_else(|| ClientError("caption describer reads scenes only".into()))?;
        caption_regions(&self.vocab, scene, image.mask()).map_err(|e| ClientError(e.to_string()))
    }
}

/// Concepts shared by the evidence of every image, followed by concepts
/// that every image contains outside its evidence as `(context: ...)`.
pub struct CommonSummarizer {
    vocab: Arc<ConceptVocabulary>,
}

impl Summarizer for CommonSummarizer {
    fn summarize(&self, images: &[Image]) -> Result<String, ClientError> {
        if images.len() < 2 {
            return Err(ClientError("need at least two images".into()));
        }
        let mut evidence: Option<std::collections::BTreeSet<String>> = None;
        let mut whole: Option<std::collections::BTreeSet<String>> = None;
        for img in images {
            let scene = img
                .as_scene()
                .ok_or_else(|| ClientError("summarizer reads scenes only".into()))?;
            let masked = caption_labels(&self.vocab, scene, img.mask())
                .map_err(|e| ClientError(e.to_string()))?;
            let all = caption_labels(&self.vocab, scene, None).map_err(|e| ClientError(e.to_string()))?;
            evidence = Some(match evidence {
                None => masked,
                Some(e) => e.intersection(&masked).cloned().collect(),
            });
            whole = Some(match whole {
                None => all,
                Some(w) => w.intersection(&all).cloned().collect(),
            });
        }
        let evidence = evidence.unwrap_or_default();
        let context: Vec<&str> = whole
            .iter()
            .flatten()
            .filter(|c| !evidence.contains(*c))
            .map(String::as_str)
            .collect();
        let mut out = if evidence.is_empty() {
            NO_SHARED_CONCEPT.to_string()
        } else {
            evidence.iter().map(String::as_str).collect::<Vec<_>>().join(", ")
        };
        if !context.is_empty() {
            out.push_str(&format!(" (context: {})", context.join(", ")));
        }
        Ok(out)
    }
}

/// Registry keys per client role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClientKeys {
    pub generator: String,
    pub editor: String,
    pub describer: String,
    pub summarizer: String,
}

impl Default for ClientKeys {
    fn default() -> Self {
        Self {
            generator: "scene".into(),
            editor: "scene".into(),
            describer: "caption".into(),
            summarizer: "common".into(),
        }
    }
}

pub const GENERATOR_KEYS: &[&str] = &["scene", "scene-compact"];
pub const EDITOR_KEYS: &[&str] = &["scene"];
pub const DESCRIBER_KEYS: &[&str] = &["caption"];
pub const SUMMARIZER_KEYS: &[&str] = &["common"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown {role} client `{key}` (known: {known})")]
pub struct UnknownClient {
    pub role: &'static str,
    pub key: String,
    pub known: String,
}

impl ClientKeys {
    pub fn validate(&self) -> Result<(), UnknownClient> {
        for (role, key, known) in [
            ("generator", &self.generator, GENERATOR_KEYS),
            ("editor", &self.editor, EDITOR_KEYS),
            ("describer", &self.describer, DESCRIBER_KEYS),
            ("summarizer", &self.summarizer, SUMMARIZER_KEYS),
        ] {
            if !known.contains(&key.as_str()) {
                return Err(UnknownClient {
                    role,
                    key: key.clone(),
                    known: known.join(", "),
                });
            }
        }
        Ok(())
    }
}

/// A client plus the bookkeeping the run manifest reports.
pub struct Dispatch<C: ?Sized> {
    pub key: String,
    pub deterministic: bool,
    calls: AtomicU64,
    client: Box<C>,
}

impl<C: ?Sized> Dispatch<C> {
    pub fn new(key: &str, deterministic: bool, client: Box<C>) -> Self {
        Self {
            key: key.to_string(),
            deterministic,
            calls: AtomicU64::new(0),
            client,
        }
    }

    /// Counts one dispatch and hands out the client.
    pub fn dispatch(&self) -> &C {
        self.calls.fetch_add(1, Ordering::Relaxed);
        &self.client
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientManifestEntry {
    pub key: String,
    pub deterministic: bool,
    pub calls: u64,
}

pub struct ClientRegistry {
    pub generator: Dispatch<dyn Generator>,
    pub editor: Dispatch<dyn Editor>,
    pub describer: Dispatch<dyn Describer>,
    pub summarizer: Dispatch<dyn Summarizer>,
    /// Dataset exemplar lookups, counted like a client.
    pub exemplars: Dispatch<()>,
}

impl ClientRegistry {
    pub fn from_keys(keys: &ClientKeys, vocab: Arc<ConceptVocabulary>) -> Result<Self, UnknownClient> {
        keys.validate()?;
        let config = match keys.generator.as_str() {
            "scene-compact" => SceneConfig {
                max_regions: 3,
                ..SceneConfig::default()
            },
            _ => SceneConfig::default(),
        };
        Ok(Self {
            generator: Dispatch::new(
                &keys.generator,
                true,
                Box::new(SceneGenerator {
                    vocab: vocab.clone(),
                    config,
                }),
            ),
            editor: Dispatch::new(
                &keys.editor,
                true,
                Box::new(SceneEditor {
                    vocab: vocab.clone(),
                    max_regions: config.max_regions,
                }),
            ),
            describer: Dispatch::new(
                &keys.describer,
                true,
                Box::new(CaptionDescriber {
                    vocab: vocab.clone(),
                }),
            ),
            summarizer: Dispatch::new(&keys.summarizer, true, Box::new(CommonSummarizer { vocab })),
            exemplars: Dispatch::new("exemplar-index", true, Box::new(())),
        })
    }

    pub fn manifest(&self) -> BTreeMap<String, ClientManifestEntry> {
        let entry = |key: &str, deterministic: bool, calls: u64| ClientManifestEntry {
            key: key.to_string(),
            deterministic,
            calls,
        };
        BTreeMap::from([
            (
                "generator".to_string(),
                entry(&self.generator.key, self.generator.deterministic, self.generator.calls()),
            ),
            (
                "editor".to_string(),
                entry(&self.editor.key, self.editor.deterministic, self.editor.calls()),
            ),
            (
                "describer".to_string(),
                entry(&self.describer.key, self.describer.deterministic, self.describer.calls()),
            ),
            (
                "summarizer".to_string(),
                entry(&self.summarizer.key, self.summarizer.deterministic, self.summarizer.calls()),
            ),
            (
                "exemplars".to_string(),
                entry(&self.exemplars.key, self.exemplars.deterministic, self.exemplars.calls()),
            ),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use maialab_core::scene::{dataset_scene, DEFAULT_RESOLUTION};
    use maialab_core::BinaryMask;

    fn registry() -> ClientRegistry {
        ClientRegistry::from_keys(&ClientKeys::default(), Arc::new(ConceptVocabulary::table_default()))
            .unwrap()
    }

    #[test]
    fn unknown_key_is_rejected() {
        let keys = ClientKeys {
            generator: "diffusion".into(),
            ..ClientKeys::default()
        };
        let err = keys.validate().unwrap_err();
        assert_eq!(err.role, "generator");
    }

    #[test]
    fn summary_separates_evidence_from_context() {
        let r = registry();
        let imgs: Vec<Image> = ["a", "b"]
            .iter()
            .map(|id| {
                let s = dataset_scene(id, &["dog", "leash"], DEFAULT_RESOLUTION);
                let dog = s.regions[0].bbox;
                Image::scene(s).with_mask(BinaryMask::from_boxes_dilated(224, 224, &[dog], 0))
            })
            .collect();
        let text = r.summarizer.dispatch().summarize(&imgs).unwrap();
        assert!(text.starts_with("dog"), "{text}");
        assert_eq!(r.summarizer.calls(), 1);
    }

    #[test]
    fn disjoint_scenes_share_nothing() {
        let r = registry();
        let imgs = vec![
            Image::scene(dataset_scene("a", &["dog"], DEFAULT_RESOLUTION)),
            Image::scene(dataset_scene("b", &["sky"], DEFAULT_RESOLUTION)),
        ];
        assert_eq!(r.summarizer.dispatch().summarize(&imgs).unwrap(), NO_SHARED_CONCEPT);
    }
}
