//! Content-addressed activation cache keyed by neuron address and image
//! content hash.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use maialab_core::hash;
use maialab_core::{ActivationResult, NeuronAddress};
use serde::{Deserialize, Serialize};

use crate::fsutil::write_atomic;
use crate::image::Image;
use crate::system::{System, SystemError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CacheEntry {
    neuron: NeuronAddress,
    content_hash: String,
    result: ActivationResult,
}

#[derive(Debug, Clone)]
pub struct ActivationCache {
    dir: PathBuf,
}

impl ActivationCache {
    pub fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
        }
    }

    fn path(&self, neuron: &NeuronAddress, content_hash: &str) -> PathBuf {
        let key = hash::full_hex(&hash::digest_str(&[&neuron.to_string(), content_hash]));
        self.dir.join(&key[..2]).join(format!("{key}.json"))
    }

    /// A corrupt or mismatched entry is deleted and reported as a miss.
    pub fn get(&self, neuron: &NeuronAddress, content_hash: &str) -> Option<ActivationResult> {
        let path = self.path(neuron, content_hash);
        let bytes = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(e) if &e.neuron == neuron && e.content_hash == content_hash => Some(e.result),
            Ok(_) | Err(_) => {
                log::warn!("discarding corrupt activation cache entry {}", path.display());
                let _ = std::fs::remove_file(&path);
                None
            }
        }
    }

    pub fn put(
        &self,
        neuron: &NeuronAddress,
        content_hash: &str,
        result: &ActivationResult,
    ) -> std::io::Result<()> {
        let entry = CacheEntry {
            neuron: neuron.clone(),
            content_hash: content_hash.to_string(),
            result: result.clone(),
        };
        let bytes = serde_json::to_vec(&entry).map_err(std::io::Error::other)?;
        write_atomic(&self.path(neuron, content_hash), &bytes)
    }
}

/// Serves probes from the cache and forwards misses to the backend.
pub struct CachedSystem {
    inner: Arc<dyn System>,
    cache: ActivationCache,
}

impl CachedSystem {
    pub fn new(inner: Arc<dyn System>, cache: ActivationCache) -> Self {
        Self { inner, cache }
    }
}

impl System for CachedSystem {
    fn address(&self) -> &NeuronAddress {
        self.inner.address()
    }

    fn probe(&self, images: &[Image]) -> Result<Vec<ActivationResult>, SystemError> {
        if images.is_empty() {
            return Err(SystemError::InsufficientInput);
        }
        let address = self.inner.address();
        let hashes: Vec<String> = images.iter().map(Image::content_hash).collect();
        let mut out: Vec<Option<ActivationResult>> =
            hashes.iter().map(|h| self.cache.get(address, h)).collect();
        let missing: Vec<usize> = (0..images.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<Image> = missing.iter().map(|&i| images[i].clone()).collect();
            let fresh = self.inner.probe(&batch).map_err(|e| match e {
                SystemError::BackendError { index, message } => SystemError::BackendError {
                    index: missing[index],
                    message,
                },
                other => other,
            })?;
            for (&i, r) in missing.iter().zip(fresh) {
                if let Err(e) = self.cache.put(address, &hashes[i], &r) {
                    log::warn!("activation cache write failed: {e}");
                }
                out[i] = Some(r);
            }
        }
        Ok(out.into_iter().map(|r| r.expect("every slot filled")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use maialab_core::neuron::DisplayRounding;
    use maialab_core::BinaryMask;

    fn result(a: f64) -> ActivationResult {
        ActivationResult::new(a, BinaryMask::full(4, 4), DisplayRounding::TwoDecimals)
    }

    #[test]
    fn put_get_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let c = ActivationCache::new(dir.path());
        let n = NeuronAddress::synthetic(1);
        c.put(&n, "abc", &result(0.7)).unwrap();
        assert_eq!(c.get(&n, "abc"), Some(result(0.7)));
        assert_eq!(c.get(&n, "abd"), None);
        assert_eq!(c.get(&NeuronAddress::synthetic(2), "abc"), None);
    }

    #[test]
    fn corrupt_entry_is_discarded() {
        let dir = tempfile::tempdir().unwrap();
        let c = ActivationCache::new(dir.path());
        let n = NeuronAddress::synthetic(1);
        c.put(&n, "abc", &result(0.7)).unwrap();
        let path = c.path(&n, "abc");
        std::fs::write(&path, b"\x00garbage").unwrap();
        assert_eq!(c.get(&n, "abc"), None);
        assert!(!path.exists());
    }

    #[test]
    fn concurrent_puts_leave_a_valid_entry() {
        let dir = tempfile::tempdir().unwrap();
        let c = ActivationCache::new(dir.path());
        let n = NeuronAddress::synthetic(1);
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..20 {
                        c.put(&n, "k", &result(0.3)).unwrap();
                        if let Some(r) = c.get(&n, "k") {
                            assert_eq!(r, result(0.3));
                        }
                    }
                });
            }
        });
        assert_eq!(c.get(&n, "k"), Some(result(0.3)));
    }
}
