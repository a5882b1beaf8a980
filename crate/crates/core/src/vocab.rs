//! Concept vocabulary: canonical tokens plus a one-step synonym map.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::roster;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VocabError {
    #[error("synonym `{from}` maps to `{to}`, which is not a canonical token")]
    DanglingSynonym { from: String, to: String },
    #[error("canonical token `{0}` is remapped by the synonym table")]
    CanonicalRemapped(String),
    #[error("token `{0}` is empty or not lowercase words")]
    MalformedToken(String),
}

/// Serialized form: `{"canonical": [...], "synonyms": {...}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabularyFile {
    canonical: Vec<String>,
    #[serde(default)]
    synonyms: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyFile", into = "VocabularyFile")]
pub struct ConceptVocabulary {
    canonical: BTreeSet<String>,
    synonyms: BTreeMap<String, String>,
}

impl TryFrom<VocabularyFile> for ConceptVocabulary {
    type Error = VocabError;

    fn try_from(file: VocabularyFile) -> Result<Self, Self::Error> {
        ConceptVocabulary::new(file.canonical, file.synonyms)
    }
}

impl From<ConceptVocabulary> for VocabularyFile {
    fn from(v: ConceptVocabulary) -> Self {
        VocabularyFile {
            canonical: v.canonical.into_iter().collect(),
            synonyms: v.synonyms,
        }
    }
}

/// Concepts outside the synthetic roster that the desk-scale world still
/// needs: edit targets, neutral prompt material, the planted breed and
/// background datasets and bias contexts.
const EXTRA_CONCEPTS: &[&str] = &[
    "bench", "bulldog", "cat", "chair", "cloud", "corgi", "dachshund", "desert", "flute", "jungle",
    "labrador", "lamp", "leaf", "lion", "mask", "park", "piano", "rock", "stage", "table", "vase",
];

const SYNONYMS: &[(&str, &str)] = &[
    ("animals", "animal"),
    ("arches", "arch"),
    ("babies", "baby"),
    ("balls", "ball"),
    ("beaches", "beach"),
    ("birds", "bird"),
    ("boats", "boat"),
    ("bookshelves", "bookshelf"),
    ("bricks", "brick"),
    ("bridges", "bridge"),
    ("bugs", "bug"),
    ("buildings", "building"),
    ("bulldogs", "bulldog"),
    ("buttons", "button"),
    ("car windows", "car window"),
    ("cars", "car"),
    ("cats", "cat"),
    ("circles", "circle"),
    ("corgis", "corgi"),
    ("cups", "cup"),
    ("dachshunds", "dachshund"),
    ("dogs", "dog"),
    ("doors", "door"),
    ("ears", "ear"),
    ("eye", "eyes"),
    ("feather", "feathers"),
    ("fences", "fence"),
    ("fires", "fire"),
    ("fireworks", "firework"),
    ("fishes", "fish"),
    ("flames", "flame"),
    ("flowers", "flower"),
    ("flutes", "flute"),
    ("frogs", "frog"),
    ("fruits", "fruit"),
    ("furry", "fur"),
    ("handles", "handle"),
    ("hats", "hat"),
    ("horses", "horse"),
    ("instruments", "instrument"),
    ("labradors", "labrador"),
    ("leashes", "leash"),
    ("leg", "legs"),
    ("lights", "light"),
    ("lions", "lion"),
    ("masks", "mask"),
    ("mountains", "mountain"),
    ("necklaces", "necklace"),
    ("paw", "paws"),
    ("pencils", "pencil"),
    ("person", "people"),
    ("pizzas", "pizza"),
    ("playgrounds", "playground"),
    ("pools", "pool"),
    ("racecars", "racecar"),
    ("roads", "road"),
    ("roofs", "roof"),
    ("ships", "ship"),
    ("shirts", "shirt"),
    ("sinks", "sink"),
    ("skirts", "skirt"),
    ("skylines", "skyline"),
    ("snakes", "snake"),
    ("spirals", "spiral"),
    ("stair", "stairs"),
    ("staircase", "stairs"),
    ("striped", "stripes"),
    ("stripe", "stripes"),
    ("suits", "suit"),
    ("tails", "tail"),
    ("temples", "temple"),
    ("tents", "tent"),
    ("ties", "tie"),
    ("tire", "tires"),
    ("tractors", "tractor"),
    ("trains", "train"),
    ("trees", "tree"),
    ("trucks", "truck"),
    ("tyres", "tires"),
    ("vehicles", "vehicle"),
    ("wheels", "wheel"),
    ("whiskers", "whisker"),
    ("windows", "window"),
    ("wings", "wing"),
    ("wooden", "wood"),
];

impl ConceptVocabulary {
    pub fn new(
        canonical: impl IntoIterator<Item = String>,
        synonyms: BTreeMap<String, String>,
    ) -> Result<Self, VocabError> {
        let canonical: BTreeSet<String> = canonical.into_iter().collect();
        for token in canonical.iter().chain(synonyms.keys()) {
            if !well_formed(token) {
                return Err(VocabError::MalformedToken(token.clone()));
            }
        }
        for (from, to) in &synonyms {
            if !canonical.contains(to) {
                return Err(VocabError::DanglingSynonym {
                    from: from.clone(),
                    to: to.clone(),
                });
            }
            if canonical.contains(from) && from != to {
                return Err(VocabError::CanonicalRemapped(from.clone()));
            }
        }
        Ok(Self {
            canonical,
            synonyms,
        })
    }

    /// Every concept of the synthetic roster plus the extras the substrate
    /// uses for edits, neutral prompts and the planted datasets.
    pub fn table_default() -> Self {
        let mut canonical: BTreeSet<String> = roster::table_concepts()
            .into_iter()
            .map(ToString::to_string)
            .collect();
        canonical.extend(EXTRA_CONCEPTS.iter().map(|c| c.to_string()));
        let synonyms = SYNONYMS
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        Self::new(canonical, synonyms).expect("built-in vocabulary is consistent")
    }

    pub fn canonical_tokens(&self) -> impl Iterator<Item = &str> {
        self.canonical.iter().map(String::as_str)
    }

    pub fn synonyms(&self) -> &BTreeMap<String, String> {
        &self.synonyms
    }

    pub fn len(&self) -> usize {
        self.canonical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }

    pub fn is_canonical(&self, token: &str) -> bool {
        self.canonical.contains(token)
    }

    /// Canonical form of a term (already lowercased words separated by one
    /// space), or `None` if the term is outside the vocabulary.
    pub fn normalize(&self, term: &str) -> Option<&str> {
        if let Some(c) = self.canonical.get(term) {
            return Some(c.as_str());
        }
        self.synonyms.get(term).map(String::as_str)
    }

    /// Normalizes free text (any case, punctuation) as a whole phrase.
    pub fn normalize_phrase(&self, phrase: &str) -> Option<&str> {
        let joined = tokens(phrase).join(" ");
        self.normalize(&joined)
    }

    /// Canonical concepts mentioned in `text`, in order of first mention,
    /// without duplicates. Bigrams win over their constituent tokens.
    pub fn concepts_in(&self, text: &str) -> Vec<String> {
        let words = tokens(text);
        let mut found: Vec<String> = Vec::new();
        let mut i = 0;
        while i < words.len() {
            if i + 1 < words.len() {
                let bigram = alloc::format!("{} {}", words[i], words[i + 1]);
                if let Some(c) = self.normalize(&bigram) {
                    push_unique(&mut found, c);
                    i += 2;
                    continue;
                }
            }
            if let Some(c) = self.normalize(&words[i]) {
                push_unique(&mut found, c);
            }
            i += 1;
        }
        found
    }
}

fn push_unique(found: &mut Vec<String>, c: &str) {
    if !found.iter().any(|f| f == c) {
        found.push(c.to_string());
    }
}

fn well_formed(token: &str) -> bool {
    !token.is_empty()
        && token
            .split(' ')
            .all(|w| !w.is_empty() && w.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()))
}

/// Lowercased alphanumeric words of `text`.
pub fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synonym_map_is_idempotent() {
        let v = ConceptVocabulary::table_default();
        for token in v.canonical_tokens() {
            assert_eq!(v.normalize(token), Some(token));
        }
        for target in v.synonyms().values() {
            assert_eq!(v.normalize(target), Some(target.as_str()));
        }
    }

    #[test]
    fn contains_every_roster_concept() {
        let v = ConceptVocabulary::table_default();
        for c in roster::table_concepts() {
            assert!(v.is_canonical(c), "{c}");
        }
    }

    #[test]
    fn bigram_consumes_its_tokens() {
        let v = ConceptVocabulary::table_default();
        assert_eq!(v.concepts_in("the Car Window, reflecting"), ["car window"]);
        assert_eq!(v.concepts_in("a car next to a window"), ["car", "window"]);
    }

    #[test]
    fn synonyms_resolve_inside_phrases() {
        let v = ConceptVocabulary::table_default();
        assert_eq!(v.concepts_in("fluffy animal tails"), ["animal", "tail"]);
        assert_eq!(v.concepts_in("Dogs and dogs"), ["dog"]);
    }

    #[test]
    fn rejects_dangling_synonym() {
        let mut syn = BTreeMap::new();
        syn.insert("cats".to_string(), "cat".to_string());
        let err = ConceptVocabulary::new(["dog".to_string()], syn).unwrap_err();
        assert!(matches!(err, VocabError::DanglingSynonym { .. }));
    }

    #[test]
    fn rejects_remapped_canonical() {
        let mut syn = BTreeMap::new();
        syn.insert("dog".to_string(), "cat".to_string());
        let err =
            ConceptVocabulary::new(["dog".to_string(), "cat".to_string()], syn).unwrap_err();
        assert_eq!(err, VocabError::CanonicalRemapped("dog".into()));
    }
}
