//! Contract for pixel models whose channels are probed like neurons, plus a
//! small deterministic convolutional network used as the default backend.

use std::collections::BTreeMap;
use std::sync::Mutex;

use maialab_core::neuron::DisplayRounding;
use maialab_core::raster::{percentile_mask, MaskError};
use maialab_core::{ActivationMap, ActivationResult, NeuronAddress, PixelBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Quantile used to threshold a unit's activation map into evidence.
pub const EVIDENCE_QUANTILE: f64 = 0.95;

#[derive(Debug, thiserror::Error)]
pub enum AdapterError {
    #[error("AddressError: {0}")]
    AddressError(String),
    #[error("mask construction failed: {0}")]
    Mask(#[from] MaskError),
    #[error("model `{0}` panicked during a previous forward pass")]
    Poisoned(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub channels: usize,
}

/// Channel-major activations of one layer: `data[c * h * w + y * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    pub channels: usize,
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl FeatureMaps {
    pub fn channel(&self, c: usize) -> ActivationMap {
        let n = (self.width * self.height) as usize;
        ActivationMap::new(self.width, self.height, self.data[c * n..(c + 1) * n].to_vec())
            .expect("channel slice has w * h values")
    }
}

pub trait VisionModel: Send {
    fn layers(&self) -> Vec<LayerInfo>;

    /// Runs the network up to `layer` and returns that layer's output.
    fn forward(&mut self, input: &PixelBuffer, layer: &str) -> Result<FeatureMaps, AdapterError>;
}

/// Named models, each behind its own lock so forward passes on one model
/// are serialized while different models run concurrently.
#[derive(Default)]
pub struct ModelRegistry {
    models: BTreeMap<String, Mutex<Box<dyn VisionModel>>>,
}

impl ModelRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, model: Box<dyn VisionModel>) {
        self.models.insert(name.to_string(), Mutex::new(model));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    fn lock(&self, name: &str) -> Result<std::sync::MutexGuard<'_, Box<dyn VisionModel>>, AdapterError> {
        self.models
            .get(name)
            .ok_or_else(|| AdapterError::AddressError(format!("no model named `{name}` is registered")))?
            .lock()
            .map_err(|_| AdapterError::Poisoned(name.to_string()))
    }

    pub fn check_address(&self, address: &NeuronAddress) -> Result<(), AdapterError> {
        let model = self.lock(&address.model_name)?;
        let layers = model.layers();
        let layer = layers
            .iter()
            .find(|l| l.name == address.layer_id)
            .ok_or_else(|| {
                AdapterError::AddressError(format!(
                    "model `{}` has no layer `{}`",
                    address.model_name, address.layer_id
                ))
            })?;
        if address.unit_index as usize >= layer.channels {
            return Err(AdapterError::AddressError(format!(
                "layer `{}` has {} units, index {} is out of range",
                layer.name, layer.channels, address.unit_index
            )));
        }
        Ok(())
    }

    /// Spatial max of the unit's map, with the top-5% cells upsampled to the
    /// input size as evidence.
    pub fn probe_unit(
        &self,
        address: &NeuronAddress,
        input: &PixelBuffer,
    ) -> Result<ActivationResult, AdapterError> {
        self.check_address(address)?;
        let maps = self.lock(&address.model_name)?.forward(input, &address.layer_id)?;
        let map = maps.channel(address.unit_index as usize);
        let mask = percentile_mask(&map, EVIDENCE_QUANTILE)?.resize_nearest(input.width, input.height);
        Ok(ActivationResult::new(map.max(), mask, DisplayRounding::Integer))
    }
}

/// Stage widths of [`ToyConvNet`].
pub const TOY_CHANNELS: [usize; 4] = [16, 32, 64, 128];

/// Input side after average pooling.
pub const TOY_INPUT: u32 = 28;

/// Four stages of 1x1 convolution + ReLU, each followed by 2x2 max pooling.
/// Layers `layer1`..`layer4` expose the post-ReLU outputs at 28, 14, 7 and 3
/// pixels per side. Weights are drawn once from the seed.
#[derive(Debug, Clone)]
pub struct ToyConvNet {
    /// `(weights[cout][cin] row-major, bias[cout])` per stage.
    stages: Vec<(Vec<f64>, Vec<f64>)>,
}

impl ToyConvNet {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let mut stages = Vec::new();
        for &cout in &TOY_CHANNELS {
            let scale = (2.0 / cin as f64).sqrt();
            let w = (0..cout * cin)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
                .collect();
            let b = (0..cout).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            stages.push((w, b));
            cin = cout;
        }
        Self { stages }
    }

    pub fn stage_weights(&self, stage: usize) -> (&[f64], &[f64]) {
        let (w, b) = &self.stages[stage];
        (w, b)
    }

    /// Box-averages RGB into a `TOY_INPUT` square, channel-major, in 0..255.
    pub fn pool_input(input: &PixelBuffer) -> FeatureMaps {
        let n = TOY_INPUT as usize;
        let mut data = vec![0.0; 3 * n * n];
        for oy in 0..n {
            let (y0, y1) = span(oy, n, input.height);
            for ox in 0..n {
                let (x0, x1) = span(ox, n, input.width);
                let mut sum = [0.0; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let p = input.pixel(x, y);
                        for c in 0..3 {
                            sum[c] += p[c] as f64;
                        }
                    }
                }
                let count = ((y1 - y0) * (x1 - x0)).max(1) as f64;
                for c in 0..3 {
                    data[c * n * n + oy * n + ox] = sum[c] / count;
                }
            }
        }
        FeatureMaps {
            channels: 3,
            width: TOY_INPUT,
            height: TOY_INPUT,
            data,
        }
    }
}

/// Source pixel range for output cell `i` of `n`; never empty.
fn span(i: usize, n: usize, size: u32) -> (u32, u32) {
    let lo = (i as u64 * size as u64 / n as u64) as u32;
    let hi = ((i as u64 + 1) * size as u64 / n as u64) as u32;
    (lo.min(size.saturating_sub(1)), hi.max(lo + 1).min(size))
}

fn conv1x1_relu(x: &FeatureMaps, w: &[f64], b: &[f64]) -> FeatureMaps {
    let hw = (x.width * x.height) as usize;
    let cout = b.len();
    let mut data = vec![0.0; cout * hw];
    for o in 0..cout {
        let row = &w[o * x.channels..(o + 1) * x.channels];
        let out = &mut data[o * hw..(o + 1) * hw];
        out.fill(b[o]);
        for (i, wi) in row.iter().enumerate() {
            for (dst, src) in out.iter_mut().zip(&x.data[i * hw..(i + 1) * hw]) {
                *dst += wi * src;
            }
        }
        for v in out.iter_mut() {
            *v = v.max(0.0);
        }
    }
    FeatureMaps {
        channels: cout,
        width: x.width,
        height: x.height,
        data,
    }
}

fn max_pool2(x: &FeatureMaps) -> FeatureMaps {
    let (w, h) = (x.width / 2, x.height / 2);
    let (sw, sh) = (x.width as usize, x.height as usize);
    let mut data = Vec::with_capacity(x.channels * (w * h) as usize);
    for c in 0..x.channels {
        let src = &x.data[c * sw * sh..(c + 1) * sw * sh];
        for y in 0..h as usize {
            for xx in 0..w as usize {
                let at = |dy: usize, dx: usize| src[(2 * y + dy) * sw + 2 * xx + dx];
                data.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    FeatureMaps {
        channels: x.channels,
        width: w,
        height: h,
        data,
    }
}

impl VisionModel for ToyConvNet {
    fn layers(&self) -> Vec<LayerInfo> {
        TOY_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &c)| LayerInfo {
                name: format!("layer{}", i + 1),
                channels: c,
            })
            .collect()
    }

    fn forward(&mut self, input: &PixelBuffer, layer: &str) -> Result<FeatureMaps, AdapterError> {
        let target = self
            .layers()
            .iter()
            .position(|l| l.name == layer)
            .ok_or_else(|| AdapterError::AddressError(format!("no layer `{layer}`")))?;
        let mut x = Self::pool_input(input);
        for (i, (w, b)) in self.stages.iter().enumerate() {
            x = conv1x1_relu(&x, w, b);
            if i == target {
                return Ok(x);
            }
            x = max_pool2(&x);
        }
        unreachable!("target indexes an existing stage")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use maialab_core::scene::{dataset_scene, render, DEFAULT_RESOLUTION};

    fn registry() -> ModelRegistry {
        let mut r = ModelRegistry::new();
        r.register("resnet152", Box::new(ToyConvNet::new(0)));
        r
    }

    fn addr(s: &str) -> NeuronAddress {
        s.parse().unwrap()
    }

    #[test]
    fn address_checks() {
        let r = registry();
        r.check_address(&addr("resnet152:layer4:122")).unwrap();
        for bad in ["resnet152:layer5:0", "resnet152:layer4:128", "vgg:layer1:0"] {
            assert!(matches!(
                r.check_address(&addr(bad)),
                Err(AdapterError::AddressError(_))
            ));
        }
    }

    #[test]
    fn layer_shapes() {
        let mut net = ToyConvNet::new(3);
        let px = render(&dataset_scene("a", &["dog", "sky"], DEFAULT_RESOLUTION));
        for (i, side) in [28, 14, 7, 3].into_iter().enumerate() {
            let out = net.forward(&px, &format!("layer{}", i + 1)).unwrap();
            assert_eq!((out.width, out.height, out.channels), (side, side, TOY_CHANNELS[i]));
        }
    }

    #[test]
    fn probe_is_deterministic_and_integer_reported() {
        let r = registry();
        let px = render(&dataset_scene("a", &["dog", "sky"], DEFAULT_RESOLUTION));
        let a = r.probe_unit(&addr("resnet152:layer2:5"), &px).unwrap();
        let b = r.probe_unit(&addr("resnet152:layer2:5"), &px).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reported_activation, a.activation.round());
        assert_eq!((a.evidence.width(), a.evidence.height()), (224, 224));
    }
}
