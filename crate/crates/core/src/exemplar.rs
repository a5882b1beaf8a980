//! Exact top-k selection of maximally activating dataset images.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::neuron::NeuronAddress;

pub const DEFAULT_EXEMPLAR_COUNT: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ExemplarError {
    #[error("dataset has {got} images but {k} exemplars were requested")]
    DatasetTooSmall { got: usize, k: usize },
    #[error("exemplar count must be positive")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarRecord {
    pub image_id: String,
    pub activation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub neuron: NeuronAddress,
    pub records: Vec<ExemplarRecord>,
    pub activation_floor: f64,
}

/// Descending activation, ties by ascending image id.
pub fn exemplar_order(a: &ExemplarRecord, b: &ExemplarRecord) -> Ordering {
    b.activation
        .total_cmp(&a.activation)
        .then_with(|| a.image_id.cmp(&b.image_id))
}

pub fn select_top_k(
    neuron: NeuronAddress,
    scored: impl IntoIterator<Item = (String, f64)>,
    k: usize,
) -> Result<ExemplarSet, ExemplarError> {
    if k == 0 {
        return Err(ExemplarError::ZeroK);
    }
    let mut records: Vec<ExemplarRecord> = scored
        .into_iter()
        .map(|(image_id, activation)| ExemplarRecord {
            image_id,
            activation,
        })
        .collect();
    if records.len() < k {
        return Err(ExemplarError::DatasetTooSmall {
            got: records.len(),
            k,
        });
    }
    if records.len() > k {
        records.select_nth_unstable_by(k - 1, exemplar_order);
        records.truncate(k);
    }
    records.sort_by(exemplar_order);
    let activation_floor = records[k - 1].activation;
    Ok(ExemplarSet {
        neuron,
        records,
        activation_floor,
    })
}
