//! Dataset corpora and the cached top-k exemplar index.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use maialab_core::exemplar::{select_top_k, ExemplarError, DEFAULT_EXEMPLAR_COUNT};
use maialab_core::hash;
use maialab_core::scene::{dataset_scene, DEFAULT_RESOLUTION};
use maialab_core::{ActivationResult, ConceptVocabulary, ExemplarSet, NeuronAddress, SyntheticNeuronSpec};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fsutil::{write_atomic, write_json};
use crate::image::{encode_png, Image};
use crate::system::{System, SystemError};

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error(transparent)]
    Exemplar(#[from] ExemplarError),
    #[error(transparent)]
    Probe(#[from] SystemError),
    #[error("exemplar cache io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset has more than one image with id `{0}`")]
    DuplicateId(String),
}

/// Random scenes of one to three vocabulary concepts.
pub fn random_corpus(vocab: &ConceptVocabulary, n: usize, seed: u64) -> Vec<Image> {
    let concepts: Vec<&str> = vocab.canonical_tokens().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let k = rng.random_range(1..=3);
            let picked: Vec<&str> = concepts.choose_multiple(&mut rng, k).copied().collect();
            Image::scene(dataset_scene(&format!("rand-{seed}-{i:05}"), &picked, DEFAULT_RESOLUTION))
        })
        .collect()
}

/// Scenes that cover every roster concept alone and every roster pair
/// together, `per_group` each, padded with one random context concept.
pub fn roster_corpus(
    vocab: &ConceptVocabulary,
    roster: &[SyntheticNeuronSpec],
    per_group: usize,
    seed: u64,
) -> Vec<Image> {
    let mut groups: BTreeSet<Vec<String>> = BTreeSet::new();
    for spec in roster {
        for c in spec.concepts() {
            groups.insert(vec![c.to_string()]);
        }
        if spec.concept_b.is_some() {
            groups.insert(spec.concepts().iter().map(|c| c.to_string()).collect());
        }
    }
    let concepts: Vec<&str> = vocab.canonical_tokens().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for group in &groups {
        let tag = group.join("+").replace(' ', "_");
        for i in 0..per_group {
            let mut labels: Vec<&str> = group.iter().map(String::as_str).collect();
            let ctx = concepts.choose(&mut rng).copied().expect("vocabulary is not empty");
            if !labels.contains(&ctx) {
                labels.push(ctx);
            }
            out.push(Image::scene(dataset_scene(
                &format!("roster-{tag}-{i:02}"),
                &labels,
                DEFAULT_RESOLUTION,
            )));
        }
    }
    out
}

/// Corpus used by `describe` when no dataset is configured.
pub fn default_corpus(
    vocab: &ConceptVocabulary,
    roster: &[SyntheticNeuronSpec],
    random: usize,
    per_group: usize,
    seed: u64,
) -> Vec<Image> {
    let mut out = random_corpus(vocab, random, seed);
    out.extend(roster_corpus(vocab, roster, per_group, seed));
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CacheManifest {
    dataset_hash: String,
    set: ExemplarSet,
    images: Vec<String>,
}

/// A bound dataset with memoized and optionally disk-cached exemplar sets.
pub struct ExemplarIndex {
    images: Vec<Image>,
    by_id: HashMap<String, usize>,
    dataset_hash: String,
    k: usize,
    cache_dir: Option<PathBuf>,
    memo: Mutex<HashMap<NeuronAddress, ExemplarSet>>,
}

/// Top-k exemplars with their probe results and masked images.
#[derive(Debug, Clone)]
pub struct Exemplars {
    pub set: ExemplarSet,
    pub results: Vec<ActivationResult>,
    pub masked: Vec<Image>,
}

impl ExemplarIndex {
    pub fn new(images: Vec<Image>) -> Result<Self, IndexError> {
        let mut by_id = HashMap::with_capacity(images.len());
        let mut parts = Vec::with_capacity(images.len());
        for (i, img) in images.iter().enumerate() {
            let id = img.label();
            parts.push(img.content_hash());
            if by_id.insert(id.clone(), i).is_some() {
                return Err(IndexError::DuplicateId(id));
            }
        }
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        let dataset_hash = hash::full_hex(&hash::digest_str(&refs));
        Ok(Self {
            images,
            by_id,
            dataset_hash,
            k: DEFAULT_EXEMPLAR_COUNT,
            cache_dir: None,
            memo: Mutex::new(HashMap::new()),
        })
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_cache_dir(mut self, dir: &Path) -> Self {
        self.cache_dir = Some(dir.to_path_buf());
        self
    }

    pub fn dataset_hash(&self) -> &str {
        &self.dataset_hash
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    fn cache_path(&self, address: &NeuronAddress) -> Option<PathBuf> {
        let name = format!(
            "{}-{}",
            address.to_string().replace(':', "_"),
            &self.dataset_hash[..16]
        );
        self.cache_dir.as_ref().map(|d| d.join(name))
    }

    fn load_cached(&self, address: &NeuronAddress) -> Option<ExemplarSet> {
        let path = self.cache_path(address)?.join("manifest.json");
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheManifest>(&bytes) {
            Ok(m) if m.dataset_hash == self.dataset_hash
                && &m.set.neuron == address
                && m.set.records.len() == self.k
                && m.set.records.iter().all(|r| self.by_id.contains_key(&r.image_id)) =>
            {
                Some(m.set)
            }
            _ => {
                log::warn!("discarding unusable exemplar cache entry {}", path.display());
                let _ = std::fs::remove_file(&path);
                None
            }
        }
    }

    /// Exact top-k over the whole dataset, ties by ascending image id.
    pub fn build(&self, system: &dyn System) -> Result<ExemplarSet, IndexError> {
        let address = system.address().clone();
        if let Some(set) = self.memo.lock().expect("memo lock").get(&address) {
            return Ok(set.clone());
        }
        let set = match self.load_cached(&address) {
            Some(set) => set,
            None => {
                let scores = system.score(&self.images)?;
                let set = select_top_k(
                    address.clone(),
                    self.images.iter().map(Image::label).zip(scores),
                    self.k,
                )?;
                if let Some(dir) = self.cache_path(&address) {
                    write_json(
                        &dir.join("manifest.json"),
                        &CacheManifest {
                            dataset_hash: self.dataset_hash.clone(),
                            set: set.clone(),
                            images: (0..self.k).map(|r| format!("{r:02}.png")).collect(),
                        },
                    )?;
                }
                set
            }
        };
        self.memo.lock().expect("memo lock").insert(address, set.clone());
        Ok(set)
    }

    pub fn exemplars(&self, system: &dyn System) -> Result<Exemplars, IndexError> {
        let set = self.build(system)?;
        let images: Vec<Image> = set
            .records
            .iter()
            .map(|r| self.images[self.by_id[&r.image_id]].clone())
            .collect();
        let results = system.probe(&images)?;
        let masked = crate::system::masked_images(&images, &results);
        Ok(Exemplars { set, results, masked })
    }

    /// Writes the masked exemplar PNGs next to the cached manifest.
    pub fn write_pngs(&self, system: &dyn System) -> Result<Option<PathBuf>, IndexError> {
        let Some(dir) = self.cache_path(system.address()) else {
            return Ok(None);
        };
        let ex = self.exemplars(system)?;
        for (rank, img) in ex.masked.iter().enumerate() {
            write_atomic(&dir.join(format!("{rank:02}.png")), &encode_png(&img.raster()))?;
        }
        Ok(Some(dir))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::SyntheticSystem;
    use std::sync::Arc;

    fn vocab() -> Arc<ConceptVocabulary> {
        Arc::new(ConceptVocabulary::table_default())
    }

    fn stripes(v: &Arc<ConceptVocabulary>) -> SyntheticSystem {
        SyntheticSystem::new(
            NeuronAddress::synthetic(36),
            SyntheticNeuronSpec::monosemantic("stripes"),
            v.clone(),
        )
    }

    #[test]
    fn roster_corpus_fills_conditional_exemplars() {
        let v = vocab();
        let spec = SyntheticNeuronSpec::conditional("dog", "leash");
        let corpus = roster_corpus(&v, std::slice::from_ref(&spec), 16, 0);
        let idx = ExemplarIndex::new(corpus).unwrap();
        let sys = SyntheticSystem::new(NeuronAddress::synthetic(0), spec, v);
        let ex = idx.exemplars(&sys).unwrap();
        assert!(ex.set.activation_floor > 0.0);
        assert!(ex.results.iter().all(|r| r.fired()));
    }

    #[test]
    fn disk_cache_round_trips_and_recovers_from_corruption() {
        let v = vocab();
        let dir = tempfile::tempdir().unwrap();
        let corpus = default_corpus(&v, &[SyntheticNeuronSpec::monosemantic("stripes")], 50, 16, 1);
        let sys = stripes(&v);
        let first = ExemplarIndex::new(corpus.clone())
            .unwrap()
            .with_cache_dir(dir.path())
            .build(&sys)
            .unwrap();
        let idx = ExemplarIndex::new(corpus.clone()).unwrap().with_cache_dir(dir.path());
        assert_eq!(idx.load_cached(sys.address()), Some(first.clone()));
        let manifest = idx.cache_path(sys.address()).unwrap().join("manifest.json");
        std::fs::write(&manifest, b"{not json").unwrap();
        let idx = ExemplarIndex::new(corpus).unwrap().with_cache_dir(dir.path());
        assert_eq!(idx.build(&sys).unwrap(), first);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let img = Image::scene(dataset_scene("same", &["dog"], DEFAULT_RESOLUTION));
        assert!(ExemplarIndex::new(vec![img.clone(), img]).is_err());
    }
}
