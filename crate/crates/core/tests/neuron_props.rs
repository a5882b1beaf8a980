use maialab_core::exemplar::{select_top_k, ExemplarRecord};
use maialab_core::neuron::synthetic_activation;
use maialab_core::report::{parse_final, render_report};
use maialab_core::scene::{ConceptRegion, NormBox, Provenance, Resolution, SceneImage};
use maialab_core::{
    ConceptVocabulary, FinalReport, NeuronAddress, ReportKind, SyntheticNeuronSpec, Verdict,
};
use proptest::prelude::*;

const CONCEPTS: &[&str] = &["dog", "leash", "cat", "stripes", "beach", "people"];

fn region_strategy() -> impl Strategy<Value = ConceptRegion> {
    (
        prop::sample::select(CONCEPTS),
        0.0f64..0.6,
        0.0f64..0.6,
        0.05f64..0.4,
        0.05f64..0.4,
        0.0f64..=1.0,
    )
        .prop_map(|(label, x, y, w, h, c)| {
            ConceptRegion::new(label, NormBox::new(x, y, x + w, y + h).unwrap(), c).unwrap()
        })
}

fn scene_strategy() -> impl Strategy<Value = SceneImage> {
    prop::collection::vec(region_strategy(), 0..5).prop_map(|regions| SceneImage {
        image_id: "p".into(),
        resolution: Resolution(48, 48),
        regions,
        provenance: Provenance::Dataset,
        source_prompt: String::new(),
    })
}

fn pair() -> impl Strategy<Value = (&'static str, &'static str)> {
    (prop::sample::select(CONCEPTS), prop::sample::select(CONCEPTS))
        .prop_filter("distinct", |(a, b)| a != b)
}

proptest! {
    #[test]
    fn evidence_present_iff_fired(scene in scene_strategy(), (a, b) in pair(), kind in 0u8..3) {
        let vocab = ConceptVocabulary::table_default();
        let spec = match kind {
            0 => SyntheticNeuronSpec::monosemantic(a),
            1 => SyntheticNeuronSpec::polysemantic(a, b),
            _ => SyntheticNeuronSpec::conditional(a, b),
        };
        let r = synthetic_activation(&vocab, &spec, &scene).unwrap();
        prop_assert_eq!(r.activation > 0.0, r.fired());
        prop_assert!((0.0..=1.0).contains(&r.activation));
    }

    #[test]
    fn polysemantic_is_symmetric(scene in scene_strategy(), (a, b) in pair()) {
        let vocab = ConceptVocabulary::table_default();
        let ab = synthetic_activation(&vocab, &SyntheticNeuronSpec::polysemantic(a, b), &scene).unwrap();
        let ba = synthetic_activation(&vocab, &SyntheticNeuronSpec::polysemantic(b, a), &scene).unwrap();
        prop_assert_eq!(ab, ba);
    }

    /// Adding a qualifying gate region never lowers a conditional neuron,
    /// and without the gate it is silent.
    #[test]
    fn conditional_gating(scene in scene_strategy(), (a, b) in pair()) {
        let vocab = ConceptVocabulary::table_default();
        let spec = SyntheticNeuronSpec::conditional(a, b);
        let without: SceneImage = SceneImage {
            regions: scene.regions.iter().filter(|r| r.label != b).cloned().collect(),
            ..scene.clone()
        };
        prop_assert_eq!(synthetic_activation(&vocab, &spec, &without).unwrap().activation, 0.0);
        let mut with = without.clone();
        with.regions.push(ConceptRegion::new(b, NormBox::new(0.5, 0.5, 0.9, 0.9).unwrap(), 0.9).unwrap());
        let before = synthetic_activation(&vocab, &spec, &without).unwrap().activation;
        let after = synthetic_activation(&vocab, &spec, &with).unwrap().activation;
        prop_assert!(after >= before);
    }

    /// A alone fires the single-concept neuron but not A-given-B; B alone
    /// does not fire A-given-B either.
    #[test]
    fn conditional_is_asymmetric((a, b) in pair(), conf in 0.3f64..1.0) {
        let vocab = ConceptVocabulary::table_default();
        let one = |label: &str| SceneImage {
            image_id: "q".into(),
            resolution: Resolution(48, 48),
            regions: vec![ConceptRegion::new(label, NormBox::new(0.1, 0.1, 0.6, 0.6).unwrap(), conf).unwrap()],
            provenance: Provenance::Dataset,
            source_prompt: String::new(),
        };
        let ab = SyntheticNeuronSpec::conditional(a, b);
        let mono_a = SyntheticNeuronSpec::monosemantic(a);
        prop_assert!(synthetic_activation(&vocab, &mono_a, &one(a)).unwrap().fired());
        prop_assert!(!synthetic_activation(&vocab, &ab, &one(a)).unwrap().fired());
        prop_assert!(!synthetic_activation(&vocab, &ab, &one(b)).unwrap().fired());
    }

    #[test]
    fn top_k_equals_full_sort(values in prop::collection::vec(0u8..20, 15..80), k in 1usize..15) {
        let scored: Vec<(String, f64)> = values
            .iter()
            .enumerate()
            .map(|(i, v)| (format!("img{i:03}"), *v as f64 / 4.0))
            .collect();
        let set = select_top_k(NeuronAddress::synthetic(0), scored.clone(), k).unwrap();
        let mut all: Vec<ExemplarRecord> = scored
            .into_iter()
            .map(|(image_id, activation)| ExemplarRecord { image_id, activation })
            .collect();
        all.sort_by(|a, b| b.activation.partial_cmp(&a.activation).unwrap().then(a.image_id.cmp(&b.image_id)));
        all.truncate(k);
        prop_assert_eq!(&set.records, &all);
        prop_assert_eq!(set.activation_floor, all[k - 1].activation);
    }

    #[test]
    fn report_round_trip(
        description in "[a-z][a-z ]{0,30}[a-z]",
        labels in prop::collection::vec("[a-z][a-z ]{0,20}[a-z]", 1..4),
        verdict in prop::bool::ANY,
    ) {
        let desc = FinalReport {
            kind: ReportKind::NeuronDescription,
            description: description.clone(),
            labels: labels.clone(),
            verdict: None,
            bias_text: None,
            parse_ok: true,
            rounds_used: 0,
            diagnostics: vec![],
        };
        prop_assert_eq!(&parse_final(&render_report(&desc), desc.kind), &desc);

        let spurious = FinalReport {
            kind: ReportKind::SpuriousClassification,
            description: description.clone(),
            labels: vec![if verdict { "SELECTIVE" } else { "SPURIOUS" }.to_string()],
            verdict: Some(if verdict { Verdict::Selective } else { Verdict::Spurious }),
            ..desc.clone()
        };
        prop_assert_eq!(&parse_final(&render_report(&spurious), spurious.kind), &spurious);

        let bias = FinalReport {
            kind: ReportKind::BiasIdentification,
            description: String::new(),
            labels: vec![],
            bias_text: Some(description),
            ..desc
        };
        prop_assert_eq!(&parse_final(&render_report(&bias), bias.kind), &bias);
    }
}
