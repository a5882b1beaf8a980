//! The tool context programs call into: exemplars, generation, editing,
//! description, summarization and logging.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use maialab_core::scene::is_negative_edit;
use serde::{Deserialize, Serialize};

use crate::clients::ClientRegistry;
use crate::exemplars::{ExemplarIndex, IndexError};
use crate::image::{Image, ImageStore};
use crate::log::{ExperimentLog, LogEntry, LogError, LogRecord};
use crate::system::System;

pub const DEFAULT_BATCH_CAP: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolName {
    DatasetExemplars,
    Text2Image,
    EditImages,
    DescribeImages,
    SummarizeImages,
    LogExperiment,
}

impl ToolName {
    pub const ALL: [ToolName; 6] = [
        ToolName::DatasetExemplars,
        ToolName::Text2Image,
        ToolName::EditImages,
        ToolName::DescribeImages,
        ToolName::SummarizeImages,
        ToolName::LogExperiment,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ToolName::DatasetExemplars => "dataset_exemplars",
            ToolName::Text2Image => "text2image",
            ToolName::EditImages => "edit_images",
            ToolName::DescribeImages => "describe_images",
            ToolName::SummarizeImages => "summarize_images",
            ToolName::LogExperiment => "log_experiment",
        }
    }
}

impl fmt::Display for ToolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ToolName {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ToolName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown tool `{s}`"))
    }
}

pub fn all_tools() -> BTreeSet<ToolName> {
    ToolName::ALL.into_iter().collect()
}

/// Error names lead each message so programs and agents can match on them.
#[derive(Debug, thiserror::Error)]
pub enum ToolError {
    #[error("ToolDisabled: `{0}` is switched off for this run")]
    ToolDisabled(ToolName),
    #[error("NoDatasetBound: no exemplar dataset is attached to this run")]
    NoDatasetBound,
    #[error("BatchTooLarge: {got} items exceed the per-call cap of {cap}")]
    BatchTooLarge { got: usize, cap: usize },
    #[error("EmptyBatch: `{0}` needs at least one item")]
    EmptyBatch(ToolName),
    #[error("ArityError: {0}")]
    ArityError(String),
    #[error("NegativeEditRejected: `{0}` asks for a removal; phrase edits as replacements or additions")]
    NegativeEditRejected(String),
    #[error("GenerationFailed: prompt `{prompt}`: {message}")]
    GenerationFailed { prompt: String, message: String },
    #[error("EditFailed: edit {index} (`{instruction}`): {message}")]
    EditFailed {
        index: usize,
        instruction: String,
        message: String,
    },
    #[error("DescribeFailed: image {index}: {message}")]
    DescribeFailed { index: usize, message: String },
    #[error("InsufficientInput: need at least {needed} images, got {got}")]
    InsufficientInput { needed: usize, got: usize },
    #[error("SummarizeFailed: {0}")]
    SummarizeFailed(String),
    #[error("ExemplarError: {0}")]
    Exemplars(#[from] IndexError),
    #[error("LogError: {0}")]
    Log(#[from] LogError),
    #[error("ImageStoreError: {0}")]
    ImageStore(#[from] std::io::Error),
}

/// State one session's programs act on. Owned by a single session.
pub struct ToolContext {
    pub clients: Arc<ClientRegistry>,
    pub enabled: BTreeSet<ToolName>,
    /// Exemplar floor, set by `dataset_exemplars`.
    pub activation_threshold: Option<f64>,
    pub run_id: String,
    pub seed: u64,
    pub batch_cap: usize,
    pub exemplars: Option<Arc<ExemplarIndex>>,
    pub log: ExperimentLog,
    pub images: Option<ImageStore>,
    /// Agent round and program currently executing, stamped on log entries.
    pub session_round: u32,
    pub program_source: String,
    /// Unrounded activations of images probed in this session, by image id.
    probed: HashMap<String, f64>,
}

impl ToolContext {
    pub fn new(clients: Arc<ClientRegistry>, run_id: &str, seed: u64) -> Self {
        Self {
            clients,
            enabled: all_tools(),
            activation_threshold: None,
            run_id: run_id.to_string(),
            seed,
            batch_cap: DEFAULT_BATCH_CAP,
            exemplars: None,
            log: ExperimentLog::in_memory(),
            images: None,
            session_round: 0,
            program_source: String::new(),
            probed: HashMap::new(),
        }
    }

    pub fn with_enabled(mut self, enabled: BTreeSet<ToolName>) -> Self {
        self.enabled = enabled;
        self
    }

    pub fn with_exemplars(mut self, index: Arc<ExemplarIndex>) -> Self {
        self.exemplars = Some(index);
        self
    }

    pub fn with_log(mut self, log: ExperimentLog) -> Self {
        self.log = log;
        self
    }

    pub fn with_image_store(mut self, store: ImageStore) -> Self {
        self.images = Some(store);
        self
    }

    fn require(&self, tool: ToolName) -> Result<(), ToolError> {
        if self.enabled.contains(&tool) {
            Ok(())
        } else {
            Err(ToolError::ToolDisabled(tool))
        }
    }

    fn check_batch(&self, tool: ToolName, n: usize) -> Result<(), ToolError> {
        if n == 0 {
            return Err(ToolError::EmptyBatch(tool));
        }
        if n > self.batch_cap {
            return Err(ToolError::BatchTooLarge {
                got: n,
                cap: self.batch_cap,
            });
        }
        Ok(())
    }

    /// Remembers full-precision activations for later log records.
    pub fn note_probed(&mut self, masked: &[Image], activations: &[f64]) {
        for (img, a) in masked.iter().zip(activations) {
            self.probed.insert(img.id(), *a);
        }
    }

    /// Reported activations and masked images of the top exemplars. Sets
    /// the activation threshold to the exemplar floor.
    pub fn dataset_exemplars(&mut self, system: &dyn System) -> Result<(Vec<f64>, Vec<Image>), ToolError> {
        self.require(ToolName::DatasetExemplars)?;
        let index = self.exemplars.clone().ok_or(ToolError::NoDatasetBound)?;
        self.clients.exemplars.dispatch();
        let ex = index.exemplars(system)?;
        let full: Vec<f64> = ex.results.iter().map(|r| r.activation).collect();
        self.note_probed(&ex.masked, &full);
        self.activation_threshold = Some(ex.set.activation_floor);
        Ok((
            ex.results.iter().map(|r| r.reported_activation).collect(),
            ex.masked,
        ))
    }

    pub fn text2image(&mut self, prompts: &[String]) -> Result<Vec<Image>, ToolError> {
        self.require(ToolName::Text2Image)?;
        self.check_batch(ToolName::Text2Image, prompts.len())?;
        self.generate(prompts)
    }

    fn generate(&self, prompts: &[String]) -> Result<Vec<Image>, ToolError> {
        self.clients
            .generator
            .dispatch()
            .generate(prompts, self.seed)
            .into_iter()
            .zip(prompts)
            .map(|(r, p)| {
                r.map_err(|e| ToolError::GenerationFailed {
                    prompt: p.clone(),
                    message: e.0,
                })
            })
            .collect()
    }

    /// Generates each prompt, applies the matching edit and interleaves
    /// originals with their edits.
    pub fn edit_images(
        &mut self,
        prompts: &[String],
        edits: &[String],
    ) -> Result<(Vec<Image>, Vec<String>), ToolError> {
        self.require(ToolName::EditImages)?;
        if prompts.len() != edits.len() {
            return Err(ToolError::ArityError(format!(
                "edit_images got {} prompts and {} edits",
                prompts.len(),
                edits.len()
            )));
        }
        self.check_batch(ToolName::EditImages, prompts.len())?;
        if let Some(bad) = edits.iter().find(|e| is_negative_edit(e)) {
            return Err(ToolError::NegativeEditRejected(bad.clone()));
        }
        let originals = self.generate(prompts)?;
        let mut images = Vec::with_capacity(2 * prompts.len());
        let mut titles = Vec::with_capacity(2 * prompts.len());
        for (i, (orig, edit)) in originals.into_iter().zip(edits).enumerate() {
            let edited = self
                .clients
                .editor
                .dispatch()
                .edit(&orig, edit)
                .map_err(|e| ToolError::EditFailed {
                    index: i,
                    instruction: edit.clone(),
                    message: e.0,
                })?;
            images.push(orig);
            titles.push(prompts[i].clone());
            images.push(edited);
            titles.push(edit.clone());
        }
        Ok((images, titles))
    }

    /// One fresh describer call per image; `title: description` lines.
    pub fn describe_images(&mut self, images: &[Image], titles: &[String]) -> Result<String, ToolError> {
        self.require(ToolName::DescribeImages)?;
        if images.len() != titles.len() {
            return Err(ToolError::ArityError(format!(
                "describe_images got {} images and {} titles",
                images.len(),
                titles.len()
            )));
        }
        let mut lines = Vec::with_capacity(images.len());
        for (i, (img, title)) in images.iter().zip(titles).enumerate() {
            let text = self
                .clients
                .describer
                .dispatch()
                .describe(img)
                .map_err(|e| ToolError::DescribeFailed {
                    index: i,
                    message: e.0,
                })?;
            lines.push(format!("{title}: {text}"));
        }
        Ok(lines.join("\n"))
    }

    pub fn summarize_images(&mut self, images: &[Image]) -> Result<String, ToolError> {
        self.require(ToolName::SummarizeImages)?;
        if images.len() < 2 {
            return Err(ToolError::InsufficientInput {
                needed: 2,
                got: images.len(),
            });
        }
        self.clients
            .summarizer
            .dispatch()
            .summarize(images)
            .map_err(|e| ToolError::SummarizeFailed(e.0))
    }

    pub fn log_experiment(
        &mut self,
        activations: &[f64],
        images: &[Image],
        titles: &[String],
        notes: &str,
    ) -> Result<(), ToolError> {
        self.require(ToolName::LogExperiment)?;
        if activations.len() != images.len() || images.len() != titles.len() {
            return Err(ToolError::ArityError(format!(
                "log_experiment got {} activations, {} images and {} titles",
                activations.len(),
                images.len(),
                titles.len()
            )));
        }
        let mut records = Vec::with_capacity(images.len());
        for ((a, img), title) in activations.iter().zip(images).zip(titles) {
            let image = match &self.images {
                Some(store) => store.save(img)?,
                None => format!("<image:{}>", img.id()),
            };
            records.push(LogRecord {
                title: title.clone(),
                reported_activation: *a,
                activation: self.probed.get(&img.id()).copied(),
                image,
            });
        }
        let mut notes = notes.to_string();
        if let Some(t) = self.activation_threshold {
            if activations.iter().all(|a| *a < t) {
                if !notes.is_empty() {
                    notes.push('\n');
                }
                notes.push_str(&format!(
                    "Every logged activation is below the exemplar floor ({t:.2}); more experiments may be needed."
                ));
            }
        }
        self.log.append(LogEntry {
            round_index: 0,
            session_round: self.session_round,
            program_source: self.program_source.clone(),
            records,
            notes,
            images: images.to_vec(),
        })?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clients::ClientKeys;
    use maialab_core::scene::{dataset_scene, DEFAULT_RESOLUTION};
    use maialab_core::ConceptVocabulary;

    fn ctx() -> ToolContext {
        let v = Arc::new(ConceptVocabulary::table_default());
        ToolContext::new(Arc::new(ClientRegistry::from_keys(&ClientKeys::default(), v).unwrap()), "t", 7)
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn edits_interleave() {
        let mut c = ctx();
        let (imgs, titles) = c
            .edit_images(
                &strings(&["a dog standing on the grass"]),
                &strings(&["replace the dog with a lion"]),
            )
            .unwrap();
        assert_eq!(imgs.len(), 2);
        let labels = |i: usize| -> Vec<String> {
            imgs[i].as_scene().unwrap().regions.iter().map(|r| r.label.clone()).collect()
        };
        assert_eq!(labels(0), vec!["dog", "grass"]);
        assert_eq!(labels(1), vec!["lion", "grass"]);
        assert_eq!(titles[1], "replace the dog with a lion");
    }

    #[test]
    fn edit_guards() {
        let mut c = ctx();
        assert!(matches!(
            c.edit_images(&strings(&["a dog"]), &strings(&["remove the dog"])),
            Err(ToolError::NegativeEditRejected(_))
        ));
        assert!(matches!(
            c.edit_images(&strings(&["a dog"]), &strings(&["add a hat", "add a cup"])),
            Err(ToolError::ArityError(_))
        ));
        assert_eq!(c.clients.generator.calls(), 0);
    }

    #[test]
    fn batch_cap_and_disabled_tools() {
        let mut c = ctx();
        let many: Vec<String> = (0..17).map(|i| format!("a dog {i}")).collect();
        assert!(matches!(c.text2image(&many), Err(ToolError::BatchTooLarge { got: 17, cap: 16 })));
        let mut c = ctx().with_enabled(BTreeSet::from([ToolName::LogExperiment]));
        let err = c.text2image(&strings(&["a dog"])).unwrap_err();
        assert!(err.to_string().starts_with("ToolDisabled"));
        assert_eq!(c.clients.generator.calls(), 0);
    }

    #[test]
    fn describe_is_history_independent() {
        let mut c = ctx();
        let img = Image::scene(dataset_scene("x", &["dog", "grass"], DEFAULT_RESOLUTION));
        let first = c.describe_images(&[img.clone()], &strings(&["exp 1"])).unwrap();
        c.summarize_images(&[img.clone(), img.clone()]).unwrap();
        let again = c.describe_images(&[img], &strings(&["exp 1"])).unwrap();
        assert_eq!(first, "exp 1: dog, grass");
        assert_eq!(first, again);
    }

    #[test]
    fn summarize_needs_two() {
        let mut c = ctx();
        let img = Image::scene(dataset_scene("x", &["dog"], DEFAULT_RESOLUTION));
        assert!(matches!(
            c.summarize_images(&[img]),
            Err(ToolError::InsufficientInput { needed: 2, got: 1 })
        ));
    }

    #[test]
    fn exemplars_need_a_dataset() {
        let mut c = ctx();
        let sys = crate::system::SyntheticSystem::new(
            maialab_core::NeuronAddress::synthetic(0),
            maialab_core::SyntheticNeuronSpec::monosemantic("dog"),
            Arc::new(ConceptVocabulary::table_default()),
        );
        assert!(matches!(c.dataset_exemplars(&sys), Err(ToolError::NoDatasetBound)));
    }

    #[test]
    fn log_grows_with_aligned_lists() {
        let mut c = ctx();
        let imgs = c.text2image(&strings(&["a dog", "a cat", "a sky"])).unwrap();
        c.log_experiment(&[0.1, 0.2, 0.3], &imgs, &strings(&["a", "b", "c"]), "")
            .unwrap();
        c.log_experiment(&[0.1], &imgs[..1], &strings(&["a"]), "").unwrap();
        assert_eq!(c.log.entries()[0].records.len(), 3);
        assert_eq!(c.log.entries()[1].round_index, 2);
        assert!(matches!(
            c.log_experiment(&[0.1], &imgs, &strings(&["a"]), ""),
            Err(ToolError::ArityError(_))
        ));
    }
}
