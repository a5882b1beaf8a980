//! Pixel buffers, binary masks and activation maps.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::scene::NormBox;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaskError {
    #[error("activation map is empty")]
    EmptyMap,
    #[error("quantile {0} is outside (0, 1)")]
    QuantileOutOfRange(f64),
    #[error("map has {got} values but {width}x{height} were declared")]
    ShapeMismatch { width: u32, height: u32, got: usize },
}

/// Interleaved RGB8 raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelBuffer {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u8>,
}

impl PixelBuffer {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Row-major boolean mask. Serialized as run lengths starting with a run of
/// `false` values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "MaskRuns", try_from = "MaskRuns")]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct MaskRuns {
    width: u32,
    height: u32,
    runs: Vec<u32>,
}

impl From<BinaryMask> for MaskRuns {
    fn from(m: BinaryMask) -> Self {
        let mut runs = Vec::new();
        let mut current = false;
        let mut count = 0u32;
        for &b in &m.bits {
            if b == current {
                count += 1;
            } else {
                runs.push(count);
                current = b;
                count = 1;
            }
        }
        runs.push(count);
        MaskRuns {
            width: m.width,
            height: m.height,
            runs,
        }
    }
}

impl TryFrom<MaskRuns> for BinaryMask {
    type Error = MaskError;

    fn try_from(r: MaskRuns) -> Result<Self, Self::Error> {
        let mut bits = Vec::with_capacity(r.width as usize * r.height as usize);
        let mut value = false;
        for run in r.runs {
            bits.extend(core::iter::repeat_n(value, run as usize));
            value = !value;
        }
        if bits.len() != r.width as usize * r.height as usize {
            return Err(MaskError::ShapeMismatch {
                width: r.width,
                height: r.height,
                got: bits.len(),
            });
        }
        Ok(BinaryMask {
            width: r.width,
            height: r.height,
            bits,
        })
    }
}

/// Inclusive pixel index range whose centers fall inside `[lo, hi)` of a
/// unit interval sampled at `n` pixels. `None` when no center falls inside.
fn pixel_span(lo: f64, hi: f64, n: u32) -> Option<(i64, i64)> {
    let first = libm::ceil(lo * n as f64 - 0.5) as i64;
    let last = libm::ceil(hi * n as f64 - 0.5) as i64 - 1;
    let first = first.max(0);
    let last = last.min(n as i64 - 1);
    (first <= last).then_some((first, last))
}

fn midpoint_pixel(lo: f64, hi: f64, n: u32) -> (i64, i64) {
    let p = (((lo + hi) / 2.0 * n as f64) as i64).clamp(0, n as i64 - 1);
    (p, p)
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, MaskError> {
        if bits.len() != width as usize * height as usize {
            return Err(MaskError::ShapeMismatch {
                width,
                height,
                got: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Pixels whose centers lie inside any of the boxes, grown by a
    /// Euclidean disk of `radius` pixels.
    pub fn from_boxes_dilated(width: u32, height: u32, boxes: &[NormBox], radius: u32) -> Self {
        let mut mask = Self::empty(width, height);
        let r = radius as i64;
        for b in boxes {
            // a sliver box that covers no pixel center still marks the pixel
            // holding its midpoint
            let (x0, x1) = pixel_span(b.x0(), b.x1(), width)
                .unwrap_or_else(|| midpoint_pixel(b.x0(), b.x1(), width));
            let (y0, y1) = pixel_span(b.y0(), b.y1(), height)
                .unwrap_or_else(|| midpoint_pixel(b.y0(), b.y1(), height));
            let ys = (y0 - r).max(0)..=(y1 + r).min(height as i64 - 1);
            for py in ys {
                let dy = (y0 - py).max(py - y1).max(0);
                for px in (x0 - r).max(0)..=(x1 + r).min(width as i64 - 1) {
                    let dx = (x0 - px).max(px - x1).max(0);
                    if dx * dx + dy * dy <= r * r {
                        mask.bits[py as usize * width as usize + px as usize] = true;
                    }
                }
            }
        }
        mask
    }

    /// Pixels whose centers lie inside the box (no dilation).
    pub fn box_pixels(b: &NormBox, width: u32, height: u32) -> Vec<(u32, u32)> {
        let (Some((x0, x1)), Some((y0, y1))) = (
            pixel_span(b.x0(), b.x1(), width),
            pixel_span(b.y0(), b.y1(), height),
        ) else {
            return Vec::new();
        };
        let mut out = Vec::with_capacity(((x1 - x0 + 1) * (y1 - y0 + 1)) as usize);
        for y in y0..=y1 {
            for x in x0..=x1 {
                out.push((x as u32, y as u32));
            }
        }
        out
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn coverage(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn union(&self, other: &BinaryMask) -> BinaryMask {
        debug_assert_eq!((self.width, self.height), (other.width, other.height));
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a || *b)
                .collect(),
        }
    }

    /// Nearest-neighbour resampling to a new resolution.
    pub fn resize_nearest(&self, width: u32, height: u32) -> BinaryMask {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            let sy = (y as u64 * self.height as u64 / height as u64) as u32;
            for x in 0..width {
                let sx = (x as u64 * self.width as u64 / width as u64) as u32;
                bits.push(self.get(sx, sy));
            }
        }
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    /// True pixels with at least one 4-neighbour outside the mask or on the
    /// image border.
    pub fn is_boundary(&self, x: u32, y: u32) -> bool {
        if !self.get(x, y) {
            return false;
        }
        if x == 0 || y == 0 || x + 1 == self.width || y + 1 == self.height {
            return true;
        }
        !(self.get(x - 1, y) && self.get(x + 1, y) && self.get(x, y - 1) && self.get(x, y + 1))
    }
}

/// Spatial grid of one unit's responses to one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f64>,
}

impl ActivationMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, MaskError> {
        if values.len() != width as usize * height as usize {
            return Err(MaskError::ShapeMismatch {
                width,
                height,
                got: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Linearly interpolated quantile (the common "type 7" definition).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Cells at or above the per-map `q`-quantile. A constant map yields an
/// all-true mask.
pub fn percentile_mask(map: &ActivationMap, q: f64) -> Result<BinaryMask, MaskError> {
    if map.values.is_empty() {
        return Err(MaskError::EmptyMap);
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(MaskError::QuantileOutOfRange(q));
    }
    let threshold = quantile(&map.values, q);
    Ok(BinaryMask {
        width: map.width,
        height: map.height,
        bits: map.values.iter().map(|v| *v >= threshold).collect(),
    })
}

pub const EVIDENCE_OUTLINE: [u8; 3] = [255, 0, 0];

/// Darkens pixels outside the evidence mask with a semi-opaque black overlay
/// and outlines the evidence in red.
pub fn compose_masked(pixels: &PixelBuffer, mask: &BinaryMask) -> PixelBuffer {
    let mut out = pixels.clone();
    for y in 0..pixels.height {
        for x in 0..pixels.width {
            if mask.is_boundary(x, y) {
                out.set_pixel(x, y, EVIDENCE_OUTLINE);
            } else if !mask.get(x, y) {
                let [r, g, b] = pixels.pixel(x, y);
                out.set_pixel(x, y, [darken(r), darken(g), darken(b)]);
            }
        }
    }
    out
}

fn darken(c: u8) -> u8 {
    (c as u16 * 35 / 100) as u8
}
