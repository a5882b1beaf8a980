//! The synthetic neuron roster: single concepts, disjunctive pairs and
//! conditional pairs with known ground truth.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use crate::neuron::SyntheticNeuronSpec;

pub const MONOSEMANTIC: &[&str] = &[
    "arch", "bird", "blue", "boat", "brick", "bridge", "bug", "building", "button", "car window",
    "circle", "dog", "eyes", "feathers", "flame", "frog", "grass", "hair", "hands", "handle",
    "hat", "jeans", "jigsaw", "legs", "light", "neck", "orange", "paws", "pencil", "pizza",
    "roof", "shirt", "shoes", "sky", "snake", "spiral", "stripes", "sunglasses", "tail", "text",
    "tires", "tractor", "vehicle", "wing", "yarn",
];

/// `(A, B)` pairs for neurons selective for A OR B.
pub const POLYSEMANTIC: &[(&str, &str)] = &[
    ("animal", "door"),
    ("animal", "ship"),
    ("baby", "dog"),
    ("bird", "dog"),
    ("blue", "yellow"),
    ("bookshelf", "building"),
    ("cup", "road"),
    ("dog", "car"),
    ("dog", "horse"),
    ("dog", "instrument"),
    ("fire", "fur"),
    ("firework", "whisker"),
    ("hand", "ear"),
    ("necklace", "flower"),
    ("people", "building"),
    ("people", "wood"),
    ("red", "purple"),
    ("shoe", "boat"),
    ("sink", "pool"),
    ("skirt", "water"),
    ("stairs", "fruit"),
    ("temple", "playground"),
    ("truck", "train"),
    ("window", "wheel"),
];

/// `(A, B)` pairs for neurons selective for A only in the presence of B.
pub const CONDITIONAL: &[(&str, &str)] = &[
    ("ball", "hand"),
    ("beach", "people"),
    ("bird", "tree"),
    ("bridge", "sky"),
    ("building", "sky"),
    ("cup", "handle"),
    ("dog", "leash"),
    ("fence", "animal"),
    ("fish", "water"),
    ("grass", "dog"),
    ("horse", "grass"),
    ("instrument", "hand"),
    ("skyline", "water"),
    ("sky", "bird"),
    ("snow", "road"),
    ("suit", "tie"),
    ("tent", "mountain"),
    ("water", "blue"),
    ("wheel", "racecar"),
];

pub fn table_concepts() -> BTreeSet<&'static str> {
    let mut all: BTreeSet<&'static str> = MONOSEMANTIC.iter().copied().collect();
    for (a, b) in POLYSEMANTIC.iter().chain(CONDITIONAL) {
        all.insert(a);
        all.insert(b);
    }
    all
}

/// Full roster in table order: monosemantic, then polysemantic, then
/// conditional. A neuron's unit index is its position in this list.
pub fn table_a2() -> Vec<SyntheticNeuronSpec> {
    let mut out = Vec::with_capacity(MONOSEMANTIC.len() + POLYSEMANTIC.len() + CONDITIONAL.len());
    out.extend(MONOSEMANTIC.iter().map(|c| SyntheticNeuronSpec::monosemantic(c)));
    out.extend(
        POLYSEMANTIC
            .iter()
            .map(|(a, b)| SyntheticNeuronSpec::polysemantic(a, b)),
    );
    out.extend(
        CONDITIONAL
            .iter()
            .map(|(a, b)| SyntheticNeuronSpec::conditional(a, b)),
    );
    out
}
