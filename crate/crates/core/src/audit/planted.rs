//! Planted-feature classification data: classes paired with environments at
//! fit time and re-paired by a derangement at test time, with every feature's
//! role known.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AuditError, Matrix};
use crate::neuron::{
    detect_regions, ActivationResult, DetectionThresholds, DisplayRounding, NeuronError,
};
use crate::raster::BinaryMask;
use crate::scene::SceneImage;

pub const CLASS_CONCEPTS: [&str; 4] = ["labrador", "corgi", "bulldog", "dachshund"];
pub const ENV_CONCEPTS: [&str; 5] = ["beach", "desert", "jungle", "snow", "park"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum FeatureRole {
    Selective { class: usize },
    Spurious { env: usize },
    Entangled { class: usize, env: usize },
    Noise,
}

impl FeatureRole {
    /// Noise-free response to a sample of `class` in `env`.
    pub fn mean(self, class: usize, env: usize) -> f64 {
        let ind = |b: bool| if b { 1.0 } else { 0.0 };
        match self {
            FeatureRole::Selective { class: c } => ind(c == class),
            FeatureRole::Spurious { env: e } => ind(e == env),
            FeatureRole::Entangled { class: c, env: e } => 0.5 * ind(c == class) + 0.5 * ind(e == env),
            FeatureRole::Noise => 0.0,
        }
    }

    pub fn is_selective(self) -> bool {
        matches!(self, FeatureRole::Selective { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDatasetSpec {
    pub n_classes: usize,
    pub n_envs: usize,
    pub n_features: usize,
    pub selective_per_class: usize,
    pub spurious_per_env: usize,
    pub entangled_per_class: usize,
    /// Environment each class appears in at fit time.
    pub train_pairing: Vec<usize>,
    /// Environment each class appears in at test time; must differ from
    /// `train_pairing` for every class.
    pub test_pairing: Vec<usize>,
    /// Fraction of fit samples drawn in the paired environment.
    pub pairing_strength: f64,
    pub noise: f64,
    /// Noise multiplier for spurious features, which are cleaner than the
    /// class features so an unconstrained readout leans on them.
    pub spurious_noise_ratio: f64,
    pub n_fit: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for PlantedDatasetSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_envs: 4,
            n_features: 64,
            selective_per_class: 5,
            spurious_per_env: 5,
            entangled_per_class: 2,
            train_pairing: vec![0, 1, 2, 3],
            test_pairing: vec![1, 2, 3, 0],
            pairing_strength: 0.95,
            noise: 1.0,
            spurious_noise_ratio: 0.5,
            n_fit: 1000,
            n_test: 1000,
            seed: 0,
        }
    }
}

fn injective(map: &[usize]) -> bool {
    let mut seen = map.to_vec();
    seen.sort_unstable();
    seen.windows(2).all(|w| w[0] != w[1])
}

impl PlantedDatasetSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AuditError> {
        use AuditError::SpecError;
        if !(2..=CLASS_CONCEPTS.len()).contains(&self.n_classes) {
            return Err(SpecError("class count must be between 2 and 4"));
        }
        if !(2..=ENV_CONCEPTS.len()).contains(&self.n_envs) {
            return Err(SpecError("environment count must be between 2 and 5"));
        }
        if self.train_pairing.len() != self.n_classes || self.test_pairing.len() != self.n_classes
        {
            return Err(SpecError("pairings must map every class"));
        }
        if self
            .train_pairing
            .iter()
            .chain(&self.test_pairing)
            .any(|e| *e >= self.n_envs)
        {
            return Err(SpecError("pairing names an unknown environment"));
        }
        if !injective(&self.train_pairing) || !injective(&self.test_pairing) {
            return Err(SpecError("pairings must be one-to-one"));
        }
        if self
            .train_pairing
            .iter()
            .zip(&self.test_pairing)
            .any(|(a, b)| a == b)
        {
            return Err(SpecError("test pairing must be a derangement of the train pairing"));
        }
        let planted = self.n_classes * (self.selective_per_class + self.entangled_per_class)
            + self.n_envs * self.spurious_per_env;
        if planted > self.n_features {
            return Err(SpecError("more planted features than feature columns"));
        }
        if !(0.0..=1.0).contains(&self.pairing_strength) {
            return Err(SpecError("pairing strength must lie in [0, 1]"));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0)
            || !(self.spurious_noise_ratio.is_finite() && self.spurious_noise_ratio >= 0.0)
        {
            return Err(SpecError("noise levels must be finite and non-negative"));
        }
        if self.n_fit < 2 || self.n_test == 0 {
            return Err(SpecError("need at least two fit samples and one test sample"));
        }
        Ok(())
    }

    fn noise_for(&self, role: FeatureRole) -> f64 {
        match role {
            FeatureRole::Spurious { .. } => self.noise * self.spurious_noise_ratio,
            _ => self.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSplit {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub envs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDataset {
    pub spec: PlantedDatasetSpec,
    /// Ground-truth role of each feature column.
    pub roles: Vec<FeatureRole>,
    pub fit: PlantedSplit,
    pub test: PlantedSplit,
}

impl PlantedDataset {
    pub fn generate(spec: &PlantedDatasetSpec) -> Result<Self, AuditError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut roles = Vec::with_capacity(spec.n_features);
        for class in 0..spec.n_classes {
            roles.extend((0..spec.selective_per_class).map(|_| FeatureRole::Selective { class }));
            let env = spec.train_pairing[class];
            roles.extend(
                (0..spec.entangled_per_class).map(|_| FeatureRole::Entangled { class, env }),
            );
        }
        for env in 0..spec.n_envs {
            roles.extend((0..spec.spurious_per_env).map(|_| FeatureRole::Spurious { env }));
        }
        roles.resize(spec.n_features, FeatureRole::Noise);
        roles.shuffle(&mut rng);

        let fit = sample_split(spec, &roles, spec.n_fit, false, &mut rng);
        let test = sample_split(spec, &roles, spec.n_test, true, &mut rng);
        Ok(Self {
            spec: spec.clone(),
            roles,
            fit,
            test,
        })
    }

    pub fn selective_columns(&self) -> Vec<usize> {
        (0..self.roles.len())
            .filter(|&j| self.roles[j].is_selective())
            .collect()
    }

    pub fn probe(&self, column: usize) -> Option<PlantedFeatureProbe> {
        self.roles
            .get(column)
            .map(|&role| PlantedFeatureProbe::new(role))
    }
}

fn sample_split(
    spec: &PlantedDatasetSpec,
    roles: &[FeatureRole],
    n: usize,
    shifted: bool,
    rng: &mut ChaCha8Rng,
) -> PlantedSplit {
    let p = roles.len();
    let mut data = Vec::with_capacity(n * p);
    let mut labels = Vec::with_capacity(n);
    let mut envs = Vec::with_capacity(n);
    for _ in 0..n {
        let class = rng.random_range(0..spec.n_classes);
        let paired = spec.train_pairing[class];
        let env = if shifted {
            spec.test_pairing[class]
        } else if rng.random::<f64>() < spec.pairing_strength {
            paired
        } else {
            let other = rng.random_range(0..spec.n_envs - 1);
            if other >= paired {
                other + 1
            } else {
                other
            }
        };
        for &role in roles {
            let z: f64 = StandardNormal.sample(rng);
            data.push(role.mean(class, env) + spec.noise_for(role) * z);
        }
        labels.push(class);
        envs.push(env);
    }
    PlantedSplit {
        features: Matrix::from_vec(n, p, data).expect("n * p values"),
        labels,
        envs,
    }
}

/// A planted feature exposed as a probeable unit over scenes: it responds
/// to the class and environment concepts its role ties it to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFeatureProbe {
    pub role: FeatureRole,
    pub thresholds: DetectionThresholds,
}

impl PlantedFeatureProbe {
    pub fn new(role: FeatureRole) -> Self {
        Self {
            role,
            thresholds: DetectionThresholds::default(),
        }
    }

    pub fn respond(
        &self,
        vocab: &crate::vocab::ConceptVocabulary,
        scene: &SceneImage,
    ) -> Result<ActivationResult, NeuronError> {
        let parts: Vec<(&str, f64)> = match self.role {
            FeatureRole::Selective { class } => vec![(CLASS_CONCEPTS[class], 1.0)],
            FeatureRole::Spurious { env } => vec![(ENV_CONCEPTS[env], 1.0)],
            FeatureRole::Entangled { class, env } => {
                vec![(CLASS_CONCEPTS[class], 0.5), (ENV_CONCEPTS[env], 0.5)]
            }
            FeatureRole::Noise => Vec::new(),
        };
        let (w, h) = (scene.resolution.width(), scene.resolution.height());
        let mut activation = 0.0;
        let mut regions = Vec::new();
        for (concept, weight) in parts {
            if let Some(d) = detect_regions(vocab, scene, concept, &self.thresholds)? {
                activation += weight * d.confidence;
                regions.extend(d.regions);
            }
        }
        let boxes: Vec<_> = regions.iter().map(|i| scene.regions[*i].bbox).collect();
        let mask = if boxes.is_empty() {
            BinaryMask::empty(w, h)
        } else {
            BinaryMask::from_boxes_dilated(w, h, &boxes, self.thresholds.dilation_radius)
        };
        Ok(ActivationResult::new(
            activation,
            mask,
            DisplayRounding::TwoDecimals,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{dataset_scene, DEFAULT_RESOLUTION};
    use crate::vocab::ConceptVocabulary;

    #[test]
    fn default_spec_is_valid() {
        PlantedDatasetSpec::default().validate().unwrap();
    }

    #[test]
    fn non_derangement_rejected() {
        let spec = PlantedDatasetSpec {
            test_pairing: vec![1, 0, 2, 3],
            ..PlantedDatasetSpec::default()
        };
        assert!(matches!(spec.validate(), Err(AuditError::SpecError(_))));
    }

    #[test]
    fn roles_and_shapes() {
        let ds = PlantedDataset::generate(&PlantedDatasetSpec::with_seed(3)).unwrap();
        assert_eq!(ds.roles.len(), 64);
        assert_eq!(ds.selective_columns().len(), 20);
        assert_eq!(ds.fit.features.rows(), 1000);
        assert_eq!(ds.test.features.cols(), 64);
        for (c, e) in ds.test.labels.iter().zip(&ds.test.envs) {
            assert_eq!(ds.spec.test_pairing[*c], *e);
        }
        let paired = ds
            .fit
            .labels
            .iter()
            .zip(&ds.fit.envs)
            .filter(|(c, e)| ds.spec.train_pairing[**c] == **e)
            .count();
        assert!(paired > 900, "{paired}");
    }

    #[test]
    fn same_seed_same_data() {
        let a = PlantedDataset::generate(&PlantedDatasetSpec::with_seed(9)).unwrap();
        let b = PlantedDataset::generate(&PlantedDatasetSpec::with_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probe_follows_role() {
        let vocab = ConceptVocabulary::table_default();
        let scene = dataset_scene("x", &["corgi", "beach"], DEFAULT_RESOLUTION);
        let sel = PlantedFeatureProbe::new(FeatureRole::Selective { class: 1 });
        assert!(sel.respond(&vocab, &scene).unwrap().fired());
        let other = PlantedFeatureProbe::new(FeatureRole::Selective { class: 0 });
        assert!(!other.respond(&vocab, &scene).unwrap().fired());
        let spu = PlantedFeatureProbe::new(FeatureRole::Spurious { env: 0 });
        assert!(spu.respond(&vocab, &scene).unwrap().fired());
        let noise = PlantedFeatureProbe::new(FeatureRole::Noise);
        assert_eq!(noise.respond(&vocab, &scene).unwrap().activation, 0.0);
    }
}
