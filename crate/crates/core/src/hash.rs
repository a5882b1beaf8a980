//! Stable content hashing used for image ids, jitter and placement.

use alloc::string::String;
use core::fmt::Write;

use sha2::{Digest, Sha256};

/// SHA-256 over length-prefixed parts, so `["ab", "c"]` and `["a", "bc"]`
/// never collide.
pub fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hasher.finalize().into()
}

pub fn digest_str(parts: &[&str]) -> [u8; 32] {
    let bytes: alloc::vec::Vec<&[u8]> = parts.iter().map(|p| p.as_bytes()).collect();
    digest(&bytes)
}

/// First 16 hex characters of the digest.
pub fn short_hex(d: &[u8; 32]) -> String {
    let mut out = String::with_capacity(16);
    for b in &d[..8] {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn full_hex(d: &[u8]) -> String {
    let mut out = String::with_capacity(d.len() * 2);
    for b in d {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Uniform value in `[0, 1)` from 8 bytes of the digest starting at `offset`.
pub fn unit_interval(d: &[u8; 32], offset: usize) -> f64 {
    let mut raw = [0u8; 8];
    raw.copy_from_slice(&d[offset..offset + 8]);
    // 53 significant bits
    (u64::from_le_bytes(raw) >> 11) as f64 / (1u64 << 53) as f64
}

pub fn seed_u64(d: &[u8; 32]) -> u64 {
    let mut raw = [0u8; 8];
    raw.copy_from_slice(&d[..8]);
    u64::from_le_bytes(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_prefix_separates_parts() {
        assert_ne!(digest_str(&["ab", "c"]), digest_str(&["a", "bc"]));
    }

    #[test]
    fn unit_interval_is_in_range() {
        for i in 0..50u32 {
            let d = digest(&[&i.to_le_bytes()]);
            for off in [0, 8, 16, 24] {
                let u = unit_interval(&d, off);
                assert!((0.0..1.0).contains(&u));
            }
        }
    }
}
