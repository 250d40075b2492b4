//! Planted-feature synthetic data.
//!
//! Each image is Gaussian background noise with one fixed square patch of
//! constant intensity `p`. The target score is `clamp(p + e, 0, 1)` with
//! `e ~ N(0, noise_sigma^2)`. All intensities, including `p`, sit on the
//! 8-bit grid (`k / 255`) so images survive a PNG round trip bit-exactly.
//! The best possible predictor reads the patch and reaches
//! `R^2 ~ Var(p) / (Var(p) + noise_sigma^2)`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::FaceImage;
use crate::error::{Error, Result};
use crate::ratings::ConsensusScore;
use crate::seed;

pub const SYNTHETIC_TRAIT: &str = "synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchBounds {
    pub x0: usize,
    pub y0: usize,
    pub size: usize,
}

impl PatchBounds {
    /// Quarter-side patch, horizontally centred in the lower half.
    pub fn default_for(side: usize) -> Self {
        let size = (side / 4).max(1);
        Self {
            x0: (side - size) / 2,
            y0: (side * 5 / 8).min(side - size),
            size,
        }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.size && y >= self.y0 && y < self.y0 + self.size
    }

    /// Grows the patch by `margin` on every side, clipped to the image.
    pub fn dilate(&self, margin: usize, side: usize) -> (usize, usize, usize, usize) {
        (
            self.x0.saturating_sub(margin),
            self.y0.saturating_sub(margin),
            (self.x0 + self.size + margin).min(side),
            (self.y0 + self.size + margin).min(side),
        )
    }

    pub fn mean_of(&self, image: &FaceImage) -> f64 {
        let mut sum = 0.0;
        for y in self.y0..self.y0 + self.size {
            for x in self.x0..self.x0 + self.size {
                sum += image.get(x, y);
            }
        }
        sum / (self.size * self.size) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub side: usize,
    pub seed: u64,
    pub noise_sigma: f64,
    pub background_mean: f64,
    pub background_std: f64,
    pub patch: PatchBounds,
}

impl SynthConfig {
    pub fn new(n: usize, side: usize, seed: u64) -> Self {
        Self {
            n,
            side,
            seed,
            noise_sigma: 0.05,
            background_mean: 0.5,
            background_std: 0.15,
            patch: PatchBounds::default_for(side),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthEntry {
    pub image_id: String,
    pub patch_level: f64,
    pub score_noise: f64,
    pub score: f64,
}

/// Everything needed to recompute each score from the image bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub config: SynthConfig,
    pub trait_name: String,
    pub entries: Vec<SynthEntry>,
}

impl SynthManifest {
    /// Recomputes a score from an image using only the manifest.
    pub fn recompute_score(&self, image: &FaceImage) -> Option<f64> {
        let entry = self.entries.iter().find(|e| e.image_id == image.image_id)?;
        Some((self.config.patch.mean_of(image) + entry.score_noise).clamp(0.0, 1.0))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub images: Vec<FaceImage>,
    pub scores: Vec<ConsensusScore>,
    pub manifest: SynthManifest,
}

fn quantize(v: f64) -> f64 {
    f64::from(super::to_u8(v)) / 255.0
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    if cfg.n == 0 {
        return Err(Error::Config("synthetic dataset needs n >= 1".into()));
    }
    if cfg.patch.size == 0 || cfg.patch.x0 + cfg.patch.size > cfg.side || cfg.patch.y0 + cfg.patch.size > cfg.side {
        return Err(Error::Config(format!(
            "patch {:?} does not fit a {} px image",
            cfg.patch, cfg.side
        )));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.background_std >= 0.0) {
        return Err(Error::Config("noise levels must be non-negative".into()));
    }
    let background = Normal::new(cfg.background_mean, cfg.background_std)
        .map_err(|e| Error::Config(e.to_string()))?;
    let score_noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut images = Vec::with_capacity(cfg.n);
    let mut scores = Vec::with_capacity(cfg.n);
    let mut entries = Vec::with_capacity(cfg.n);
    let width = cfg.n.to_string().len().max(5);
    for i in 0..cfg.n {
        let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "synth-image", i as u64));
        let image_id = format!("synth_{i:0width$}");
        let level = f64::from(rng.random_range(0u8..=255)) / 255.0;
        let mut pixels = Vec::with_capacity(cfg.side * cfg.side);
        for y in 0..cfg.side {
            for x in 0..cfg.side {
                let bg = background.sample(&mut rng);
                pixels.push(if cfg.patch.contains(x, y) { level } else { quantize(bg) });
            }
        }
        let noise = score_noise.sample(&mut rng);
        let image = FaceImage::new(image_id.clone(), cfg.side, cfg.side, pixels)?;
        let score = (cfg.patch.mean_of(&image) + noise).clamp(0.0, 1.0);
        scores.push(ConsensusScore {
            image_id: image_id.clone(),
            trait_name: SYNTHETIC_TRAIT.to_string(),
            mean_norm: score,
            std_norm: 0.0,
            n_ratings: 1,
        });
        entries.push(SynthEntry {
            image_id,
            patch_level: level,
            score_noise: noise,
            score,
        });
        images.push(image);
    }
    Ok(SyntheticDataset {
        images,
        scores,
        manifest: SynthManifest {
            config: cfg.clone(),
            trait_name: SYNTHETIC_TRAIT.to_string(),
            entries,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn noiseless_scores_equal_patch_means() {
        let mut cfg = SynthConfig::new(20, 16, 3);
        cfg.noise_sigma = 0.0;
        let ds = generate_synthetic(&cfg).unwrap();
        for (img, s) in ds.images.iter().zip(&ds.scores) {
            assert_eq!(s.mean_norm, cfg.patch.mean_of(img));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let cfg = SynthConfig::new(8, 16, 5);
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a.images, b.images);
        assert_eq!(a.scores, b.scores);
        let c = generate_synthetic(&SynthConfig::new(8, 16, 6)).unwrap();
        assert_ne!(a.images, c.images);
    }

    #[test]
    fn patch_reader_hits_the_analytic_ceiling() {
        let cfg = SynthConfig::new(2000, 16, 11);
        let ds = generate_synthetic(&cfg).unwrap();
        let p: Vec<f64> = ds.images.iter().map(|im| cfg.patch.mean_of(im)).collect();
        let y: Vec<f64> = ds.scores.iter().map(|s| s.mean_norm).collect();
        // Var(p) for the 256-level uniform grid is (256^2 - 1) / (12 * 255^2)
        let var_p = (256.0f64 * 256.0 - 1.0) / (12.0 * 255.0 * 255.0);
        let ceiling = var_p / (var_p + cfg.noise_sigma * cfg.noise_sigma);
        let r2 = stats::r_squared(&p, &y).unwrap();
        assert!((r2 - ceiling).abs() <= 0.03, "r2 {r2} vs ceiling {ceiling}");
    }

    #[test]
    fn manifest_and_png_bytes_reconstruct_scores() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = SynthConfig::new(12, 20, 8);
        let ds = generate_synthetic(&cfg).unwrap();
        let mpath = dir.path().join("manifest.json");
        ds.manifest.save(&mpath).unwrap();
        let manifest = SynthManifest::load(&mpath).unwrap();
        for (img, s) in ds.images.iter().zip(&ds.scores) {
            let p = dir.path().join(format!("{}.png", img.image_id));
            img.save_png(&p).unwrap();
            let back = FaceImage::load_png(&p).unwrap();
            assert_eq!(&back.pixels, &img.pixels);
            let recomputed = manifest.recompute_score(&back).unwrap();
            assert!((recomputed - s.mean_norm).abs() < 1e-12);
        }
    }
}
