use rand::Rng;
use serde::{Deserialize, Serialize};

use super::FaceImage;

/// Random perturbation ranges at full strength; `amount` scales every one
/// of them, so `amount = 0` leaves images untouched.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    pub amount: f64,
    pub horizontal_flip_prob: f64,
    /// Degrees, symmetric.
    pub rotation_range: f64,
    /// Fraction of the side, symmetric, per axis.
    pub shift_range: f64,
    /// Additive intensity offset, symmetric.
    pub intensity_jitter: f64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            amount: 0.0,
            horizontal_flip_prob: 0.5,
            rotation_range: 10.0,
            shift_range: 0.08,
            intensity_jitter: 0.05,
        }
    }
}

impl AugmentationConfig {
    pub fn with_amount(amount: f64) -> Self {
        Self {
            amount,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.amount == 0.0
    }
}

pub fn flip_horizontal(image: &FaceImage) -> FaceImage {
    let mut out = image.clone();
    for y in 0..image.height {
        for x in 0..image.width {
            out.set(image.width - 1 - x, y, image.get(x, y));
        }
    }
    out.landmarks = image.landmarks.map(|l| {
        let w = image.width as f64 - 1.0;
        super::EyeLandmarks {
            left: (w - l.right.0, l.right.1),
            right: (w - l.left.0, l.left.1),
        }
    });
    out
}

/// Applies a random flip, rotation about the centre, shift and global
/// intensity offset. Exactly five values are drawn from `rng` per call.
pub fn augment<R: Rng + ?Sized>(image: &FaceImage, cfg: &AugmentationConfig, rng: &mut R) -> FaceImage {
    let a = cfg.amount.clamp(0.0, 1.0);
    let flip_draw: f64 = rng.random();
    let sym = |rng: &mut R, range: f64| (2.0 * rng.random::<f64>() - 1.0) * range * a;
    let angle = sym(rng, cfg.rotation_range).to_radians();
    let shift_x = sym(rng, cfg.shift_range) * image.width as f64;
    let shift_y = sym(rng, cfg.shift_range) * image.height as f64;
    let jitter = sym(rng, cfg.intensity_jitter);

    let mut out = if flip_draw < a * cfg.horizontal_flip_prob {
        flip_horizontal(image)
    } else {
        image.clone()
    };
    if angle != 0.0 || shift_x != 0.0 || shift_y != 0.0 {
        let src = out.clone();
        let (s, c) = angle.sin_cos();
        let cx = (src.width as f64 - 1.0) / 2.0;
        let cy = (src.height as f64 - 1.0) / 2.0;
        let max_x = src.width as f64 - 1.0;
        let max_y = src.height as f64 - 1.0;
        for y in 0..src.height {
            for x in 0..src.width {
                let dx = x as f64 - cx - shift_x;
                let dy = y as f64 - cy - shift_y;
                // inverse map, border replicated
                let sx = (cx + c * dx + s * dy).clamp(0.0, max_x);
                let sy = (cy - s * dx + c * dy).clamp(0.0, max_y);
                out.set(x, y, src.sample_bilinear(sx, sy));
            }
        }
        out.landmarks = None;
    }
    if jitter != 0.0 {
        out.pixels.iter_mut().for_each(|v| *v += jitter);
    }
    out.pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use proptest::prelude::*;
    use rand::Rng;

    fn noise(side: usize, s: u64) -> FaceImage {
        let mut rng = seed::rng(s);
        let px = (0..side * side).map(|_| rng.random::<f64>()).collect();
        FaceImage::new("x", side, side, px).unwrap()
    }

    #[test]
    fn zero_amount_is_identity() {
        let img = noise(16, 1);
        let out = augment(&img, &AugmentationConfig::with_amount(0.0), &mut seed::rng(9));
        assert_eq!(out.pixels, img.pixels);
    }

    #[test]
    fn forced_flip_is_an_involution() {
        let img = noise(16, 2);
        let cfg = AugmentationConfig {
            amount: 1.0,
            horizontal_flip_prob: 1.0,
            rotation_range: 0.0,
            shift_range: 0.0,
            intensity_jitter: 0.0,
        };
        let once = augment(&img, &cfg, &mut seed::rng(3));
        for y in 0..16 {
            for x in 0..16 {
                assert_eq!(once.get(x, y), img.get(15 - x, y));
            }
        }
        let twice = augment(&once, &cfg, &mut seed::rng(4));
        assert_eq!(twice.pixels, img.pixels);
    }

    #[test]
    fn seeded_full_augmentation_is_reproducible() {
        let img = noise(24, 5);
        let cfg = AugmentationConfig::with_amount(1.0);
        let a = augment(&img, &cfg, &mut seed::rng(77));
        let b = augment(&img, &cfg, &mut seed::rng(77));
        assert_eq!(a.pixels, b.pixels);
    }

    proptest! {
        #[test]
        fn output_stays_in_unit_range(amount in 0.0f64..=1.0, s in any::<u64>()) {
            let img = noise(12, s);
            let cfg = AugmentationConfig { intensity_jitter: 0.5, ..AugmentationConfig::with_amount(amount) };
            let out = augment(&img, &cfg, &mut seed::rng(s ^ 1));
            prop_assert!(out.pixels.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
