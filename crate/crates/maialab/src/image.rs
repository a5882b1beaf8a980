//! Image handles shared by tools, systems and transcripts.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use maialab_core::hash;
use maialab_core::raster::compose_masked;
use maialab_core::scene::render;
use maialab_core::{BinaryMask, PixelBuffer, SceneImage};

use crate::fsutil::write_atomic;

#[derive(Debug, Clone, PartialEq)]
pub enum ImageContent {
    Scene(Arc<SceneImage>),
    Pixels(Arc<PixelBuffer>),
}

/// A scene or raster, optionally carrying an evidence mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub content: ImageContent,
    pub mask: Option<Arc<BinaryMask>>,
}

impl Image {
    pub fn scene(scene: SceneImage) -> Self {
        Self {
            content: ImageContent::Scene(Arc::new(scene)),
            mask: None,
        }
    }

    pub fn pixels(pixels: PixelBuffer) -> Self {
        Self {
            content: ImageContent::Pixels(Arc::new(pixels)),
            mask: None,
        }
    }

    pub fn with_mask(&self, mask: BinaryMask) -> Self {
        Self {
            content: self.content.clone(),
            mask: Some(Arc::new(mask)),
        }
    }

    pub fn unmasked(&self) -> Self {
        Self {
            content: self.content.clone(),
            mask: None,
        }
    }

    pub fn as_scene(&self) -> Option<&SceneImage> {
        match &self.content {
            ImageContent::Scene(s) => Some(s),
            ImageContent::Pixels(_) => None,
        }
    }

    pub fn mask(&self) -> Option<&BinaryMask> {
        self.mask.as_deref()
    }

    pub fn size(&self) -> (u32, u32) {
        match &self.content {
            ImageContent::Scene(s) => (s.resolution.width(), s.resolution.height()),
            ImageContent::Pixels(p) => (p.width, p.height),
        }
    }

    /// Unmasked raster.
    pub fn base_raster(&self) -> PixelBuffer {
        match &self.content {
            ImageContent::Scene(s) => render(s),
            ImageContent::Pixels(p) => (**p).clone(),
        }
    }

    /// Raster with the evidence overlay applied when masked.
    pub fn raster(&self) -> PixelBuffer {
        let base = self.base_raster();
        match &self.mask {
            Some(m) => compose_masked(&base, m),
            None => base,
        }
    }

    /// Bytes identifying the content: the scene sidecar when present, else
    /// the raw pixels. Masks are not part of the content.
    pub fn content_bytes(&self) -> Vec<u8> {
        match &self.content {
            ImageContent::Scene(s) => scene_sidecar_bytes(s),
            ImageContent::Pixels(p) => {
                let mut out = Vec::with_capacity(p.data.len() + 8);
                out.extend_from_slice(&p.width.to_le_bytes());
                out.extend_from_slice(&p.height.to_le_bytes());
                out.extend_from_slice(&p.data);
                out
            }
        }
    }

    pub fn content_hash(&self) -> String {
        hash::full_hex(&hash::digest(&[&self.content_bytes()]))
    }

    /// Stable short id covering content and mask.
    pub fn id(&self) -> String {
        let mask = self
            .mask
            .as_ref()
            .map(|m| serde_json::to_vec(&**m).expect("masks serialize"))
            .unwrap_or_default();
        hash::short_hex(&hash::digest(&[&self.content_bytes(), &mask]))
    }

    /// Human-facing name: the scene id when there is one.
    pub fn label(&self) -> String {
        match &self.content {
            ImageContent::Scene(s) => s.image_id.clone(),
            ImageContent::Pixels(_) => self.id(),
        }
    }
}

pub fn scene_sidecar_bytes(scene: &SceneImage) -> Vec<u8> {
    serde_json::to_vec(scene).expect("scenes serialize")
}

pub fn encode_png(pixels: &PixelBuffer) -> Vec<u8> {
    let mut out = Vec::new();
    let encoder = image::codecs::png::PngEncoder::new(&mut out);
    image::ImageEncoder::write_image(
        encoder,
        &pixels.data,
        pixels.width,
        pixels.height,
        image::ExtendedColorType::Rgb8,
    )
    .expect("in-memory PNG encoding does not fail");
    out
}

pub fn decode_png(bytes: &[u8]) -> Result<PixelBuffer, image::ImageError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?.to_rgb8();
    Ok(PixelBuffer {
        width: img.width(),
        height: img.height(),
        data: img.into_raw(),
    })
}

/// Content-addressed PNG directory. Scenes also get a JSON sidecar.
#[derive(Debug, Clone)]
pub struct ImageStore {
    root: PathBuf,
    /// Directory name recorded in references, relative to the run root.
    prefix: &'static str,
}

impl ImageStore {
    pub fn new(run_root: &Path) -> Self {
        Self {
            root: run_root.to_path_buf(),
            prefix: "images",
        }
    }

    /// Writes the image if absent and returns its path relative to the run
    /// root.
    pub fn save(&self, image: &Image) -> std::io::Result<String> {
        let id = image.id();
        let rel = format!("{}/{id}.png", self.prefix);
        let path = self.root.join(&rel);
        if !path.exists() {
            write_atomic(&path, &encode_png(&image.raster()))?;
            if let Some(scene) = image.as_scene() {
                let sidecar = self.root.join(format!("{}/{id}.json", self.prefix));
                write_atomic(&sidecar, &scene_sidecar_bytes(scene))?;
            }
        }
        Ok(rel)
    }
}
