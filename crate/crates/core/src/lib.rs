//! Pure building blocks for automated interpretability experiments.
//!
//! Everything in this crate is deterministic and allocation-only: a symbolic
//! scene world standing in for generative and detection models, synthetic
//! neurons with known selectivity, exemplar selection, final-report parsing,
//! predictive-evaluation metrics and the sparse multinomial readout used to
//! audit final-layer features. IO, clients and the agent loop live in the
//! `maialab` crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod audit;
pub mod eval;
pub mod exemplar;
pub mod hash;
pub mod neuron;
pub mod raster;
pub mod report;
pub mod roster;
pub mod scene;
pub mod vocab;

pub use exemplar::{ExemplarRecord, ExemplarSet};
pub use neuron::{
    ActivationResult, DetectionThresholds, NeuronAddress, NeuronKind, SyntheticNeuronSpec,
};
pub use raster::{ActivationMap, BinaryMask, PixelBuffer};
pub use report::{FinalReport, ReportKind, Verdict};
pub use scene::{ConceptRegion, NormBox, Provenance, SceneImage};
pub use vocab::ConceptVocabulary;
