//! Spurious-feature and bias auditing: planted data, standardization, the
//! sparse multinomial readout and its retraining.

mod bias;
mod l1;
mod matrix;
mod planted;
mod sparsity;
mod standardize;

pub use bias::{PlantedBiasSpec, BIAS_CLASSES, BIAS_CONTEXTS};
pub use l1::{
    accuracy, fit_l1_multinomial, kkt_violation, objective, predict, retrain_and_evaluate,
    L1Options, L1Path, NONZERO_EPS,
};
pub use matrix::Matrix;
pub use planted::{
    FeatureRole, PlantedDataset, PlantedDatasetSpec, PlantedFeatureProbe, PlantedSplit,
    CLASS_CONCEPTS, ENV_CONCEPTS,
};
pub use sparsity::{lambda_for_sparsity, lambda_max, SparsitySearch, DEFAULT_MAX_STEPS};
pub use standardize::{standardize, Standardizer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AuditError {
    #[error("need at least 2 samples, got {0}")]
    InsufficientData(usize),
    #[error("numerical error: {0}")]
    NumericalError(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("label {label} is outside 0..{classes}")]
    InvalidLabel { label: usize, classes: usize },
    #[error("regularization strength must be finite and non-negative, got {0}")]
    InvalidLambda(f64),
    #[error("sparsity target {target} is outside 1..={features}")]
    InvalidTarget { target: usize, features: usize },
    #[error(
        "sparsity target {target} not bracketed within the step budget (counts {below} and {above})"
    )]
    SparsityUnreachable {
        target: usize,
        below: usize,
        above: usize,
    },
    #[error("feature subset is empty")]
    EmptySubset,
    #[error("invalid planted dataset spec: {0}")]
    SpecError(&'static str),
}
