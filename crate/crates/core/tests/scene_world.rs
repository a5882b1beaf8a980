use maialab_core::raster::BinaryMask;
use maialab_core::scene::{
    caption_labels, dataset_scene, edit_scene, generate_scene, region_mask_overlap, render,
    ConceptRegion, NormBox, Resolution, SceneConfig, DEFAULT_MAX_REGIONS, DEFAULT_RESOLUTION,
};
use maialab_core::ConceptVocabulary;
use proptest::prelude::*;
use sha2::{Digest, Sha256};

const WORDS: &[&str] = &[
    "dog", "cat", "leash", "beach", "people", "stripes", "flute", "hand", "qwerty", "a", "the",
    "with", "on",
];

fn prompt_strategy() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(WORDS), 1..8).prop_map(|w| w.join(" "))
}

/// Confidence jitter recomputed straight from SHA-256 over the
/// length-prefixed `(image_id, label)` pair.
fn oracle_confidence(image_id: &str, label: &str) -> f64 {
    let mut h = Sha256::new();
    for part in [image_id, label] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let d = h.finalize();
    let raw = u64::from_le_bytes(d[..8].try_into().unwrap());
    let u = (raw >> 11) as f64 / (1u64 << 53) as f64;
    0.9 + (u * 2.0 - 1.0) * 0.05
}

#[test]
fn jitter_matches_independent_hash() {
    let vocab = ConceptVocabulary::table_default();
    for (i, prompt) in ["a dog on a leash", "stripes and flutes", "people at the beach"]
        .iter()
        .enumerate()
    {
        let scene = generate_scene(&vocab, prompt, i as u64, &SceneConfig::default()).unwrap();
        assert!(!scene.regions.is_empty());
        for r in &scene.regions {
            assert_eq!(r.confidence, oracle_confidence(&scene.image_id, &r.label));
            assert!((0.85..=0.95).contains(&r.confidence));
        }
    }
}

#[test]
fn synonyms_map_to_canonical_regions() {
    let vocab = ConceptVocabulary::table_default();
    let scene = generate_scene(&vocab, "two dogs", 0, &SceneConfig::default()).unwrap();
    let labels: Vec<_> = scene.regions.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["dog"]);
}

proptest! {
    #[test]
    fn generation_is_deterministic(prompt in prompt_strategy(), seed in 0u64..1000) {
        let vocab = ConceptVocabulary::table_default();
        let cfg = SceneConfig::default();
        let a = generate_scene(&vocab, &prompt, seed, &cfg).unwrap();
        let b = generate_scene(&vocab, &prompt, seed, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.regions.len() <= DEFAULT_MAX_REGIONS);
        prop_assert_eq!(render(&a), render(&b));
    }

    #[test]
    fn edits_touch_only_the_target(seed in 0u64..500, pick in 0usize..3) {
        let vocab = ConceptVocabulary::table_default();
        let scene = generate_scene(&vocab, "dog cat leash", seed, &SceneConfig::default()).unwrap();
        let target = ["dog", "cat", "leash"][pick];
        let edited = edit_scene(&vocab, &scene, &format!("replace the {target} with a flute"), 8).unwrap();
        prop_assert_eq!(edited.regions.len(), scene.regions.len());
        for (before, after) in scene.regions.iter().zip(&edited.regions) {
            if before.label == target {
                prop_assert_eq!(after.label.as_str(), "flute");
                prop_assert_eq!(after.bbox, before.bbox);
            } else {
                prop_assert_eq!(after, before);
            }
        }
        let recolored = edit_scene(&vocab, &scene, &format!("change the color of the {target} to red"), 8).unwrap();
        for (before, after) in scene.regions.iter().zip(&recolored.regions) {
            if before.label != target {
                prop_assert_eq!(after, before);
            }
        }
    }

    #[test]
    fn unmasked_caption_lists_exactly_the_regions(prompt in prompt_strategy(), seed in 0u64..100) {
        let vocab = ConceptVocabulary::table_default();
        let scene = generate_scene(&vocab, &prompt, seed, &SceneConfig::default()).unwrap();
        let caption = caption_labels(&vocab, &scene, None).unwrap();
        let labels: std::collections::BTreeSet<String> =
            scene.regions.iter().map(|r| r.label.clone()).collect();
        prop_assert_eq!(caption, labels);
    }

    /// On a pixel-aligned grid the pixel-count overlap equals the area ratio.
    #[test]
    fn overlap_matches_area_ratio(
        a in (0u32..30, 0u32..30, 1u32..10, 1u32..10),
        b in (0u32..30, 0u32..30, 1u32..10, 1u32..10),
    ) {
        let n = 32u32;
        let to_box = |(x, y, w, h): (u32, u32, u32, u32)| {
            let (x1, y1) = ((x + w).min(n), (y + h).min(n));
            NormBox::new(x as f64 / n as f64, y as f64 / n as f64, x1 as f64 / n as f64, y1 as f64 / n as f64).unwrap()
        };
        let (ba, bb) = (to_box(a), to_box(b));
        let region = ConceptRegion::new("dog", ba, 0.9).unwrap();
        let mask = BinaryMask::from_boxes_dilated(n, n, &[bb], 0);
        let expected = ba.intersection_area(&bb) / ba.area();
        prop_assert!((region_mask_overlap(&region, &mask) - expected).abs() < 1e-9);
    }
}

#[test]
fn render_depends_on_regions_only() {
    let mut a = dataset_scene("x", &["dog", "leash"], DEFAULT_RESOLUTION);
    let mut b = a.clone();
    b.image_id = "y".into();
    b.source_prompt = "something else".into();
    assert_eq!(render(&a), render(&b));
    a.resolution = Resolution(64, 64);
    assert_eq!(render(&a).width, 64);
}
