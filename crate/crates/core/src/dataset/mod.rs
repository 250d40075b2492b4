//! Grayscale face images and everything needed to turn a folder of them
//! into training data: alignment, splits, augmentation, and a synthetic
//! planted-feature generator used as a learning oracle.

mod align;
mod augment;
mod image_io;
mod split;
mod synth;

pub use align::{align_face, prepare, AlignConfig};
pub use augment::{augment, AugmentationConfig};
pub use image_io::{load_image_dir, read_landmarks, write_landmarks};
pub use split::{make_split, split_sizes, DataSplit, MIN_SPLIT_SIZE};
pub use synth::{generate_synthetic, PatchBounds, SynthConfig, SynthEntry, SynthManifest, SyntheticDataset, SYNTHETIC_TRAIT};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIDE: usize = 128;

/// Eye centres in pixel coordinates, `(x, y)` with `x` the column.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeLandmarks {
    pub left: (f64, f64),
    pub right: (f64, f64),
}

/// A grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceImage {
    pub image_id: String,
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub landmarks: Option<EyeLandmarks>,
}

impl FaceImage {
    pub fn new(image_id: impl Into<String>, width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        let image_id = image_id.into();
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Config(format!(
                "image {image_id}: {} pixels do not fill {width}x{height}",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!(
                "image {image_id}: intensity {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            image_id,
            width,
            height,
            pixels,
            landmarks: None,
        })
    }

    pub fn filled(image_id: impl Into<String>, side: usize, value: f64) -> Self {
        Self {
            image_id: image_id.into(),
            width: side,
            height: side,
            pixels: vec![value; side * side],
            landmarks: None,
        }
    }

    pub fn with_landmarks(mut self, landmarks: EyeLandmarks) -> Self {
        self.landmarks = Some(landmarks);
        self
    }

    /// Side length of a square image; `None` for rectangular images.
    pub fn side(&self) -> Option<usize> {
        (self.width == self.height).then_some(self.width)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v;
    }

    /// Bilinear sample; neighbours outside the image contribute zero.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (x0, y0) = (x0 as i64, y0 as i64);
        let px = |xi: i64, yi: i64| -> f64 {
            if xi < 0 || yi < 0 || xi >= self.width as i64 || yi >= self.height as i64 {
                0.0
            } else {
                self.pixels[yi as usize * self.width + xi as usize]
            }
        };
        let top = px(x0, y0) * (1.0 - fx) + if fx > 0.0 { px(x0 + 1, y0) * fx } else { 0.0 };
        if fy > 0.0 {
            let bottom = px(x0, y0 + 1) * (1.0 - fx) + if fx > 0.0 { px(x0 + 1, y0 + 1) * fx } else { 0.0 };
            top * (1.0 - fy) + bottom * fy
        } else {
            top
        }
    }

    pub fn load_png(path: &std::path::Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .to_luma8();
        let (w, h) = img.dimensions();
        let pixels = img.as_raw().iter().map(|&b| f64::from(b) / 255.0).collect();
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        FaceImage::new(id, w as usize, h as usize, pixels)
    }

    /// Writes an 8-bit grayscale PNG (values rounded to the nearest level).
    pub fn save_png(&self, path: &std::path::Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let bytes: Vec<u8> = self.pixels.iter().map(|&v| to_u8(v)).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches dimensions")
            .save(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })
    }
}

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// An image paired with its regression target.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: FaceImage,
    pub target: f64,
}

/// Pairs images with consensus scores for one trait, keeping `ids` order.
/// Every id must have both an image and a score.
pub fn join_labels(
    images: &[FaceImage],
    scores: &[crate::ratings::ConsensusScore],
    trait_name: &str,
    ids: &[String],
) -> Result<Vec<LabeledImage>> {
    use std::collections::HashMap;
    let by_id: HashMap<&str, &FaceImage> = images.iter().map(|i| (i.image_id.as_str(), i)).collect();
    let target: HashMap<&str, f64> = scores
        .iter()
        .filter(|s| s.trait_name == trait_name)
        .map(|s| (s.image_id.as_str(), s.mean_norm))
        .collect();
    ids.iter()
        .map(|id| {
            let image = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::NoData(format!("no image for id {id}")))?;
            let t = target
                .get(id.as_str())
                .ok_or_else(|| Error::NoData(format!("no {trait_name} score for id {id}")))?;
            Ok(LabeledImage {
                image: (*image).clone(),
                target: *t,
            })
        })
        .collect()
}
