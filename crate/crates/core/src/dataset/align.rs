//! In-plane alignment from two eye landmarks.
//!
//! A similarity transform (rotation, isotropic scale, translation) maps the
//! detected eyes onto fixed canonical positions in a `side x side` output.
//! Canonical positions are rounded to whole pixels so that an already
//! aligned image maps through the identity exactly.

use serde::{Deserialize, Serialize};

use super::{EyeLandmarks, FaceImage, DEFAULT_SIDE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub side: usize,
    /// Eye row as a fraction of the side.
    pub eye_row: f64,
    /// Inter-ocular distance as a fraction of the side.
    pub eye_span: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            side: DEFAULT_SIDE,
            eye_row: 0.4,
            eye_span: 0.4,
        }
    }
}

impl AlignConfig {
    pub fn with_side(side: usize) -> Self {
        Self {
            side,
            ..Self::default()
        }
    }

    pub fn canonical(&self) -> EyeLandmarks {
        let s = self.side as f64;
        let y = (s * self.eye_row).round();
        EyeLandmarks {
            left: ((s * (0.5 - self.eye_span / 2.0)).round(), y),
            right: ((s * (0.5 + self.eye_span / 2.0)).round(), y),
        }
    }
}

fn failed(image: &FaceImage, reason: &str) -> Error {
    Error::AlignmentFailed {
        image_id: image.image_id.clone(),
        reason: reason.to_string(),
    }
}

/// Rotates the inter-eye segment to horizontal and rescales to the
/// configured side. The output carries the canonical landmarks.
pub fn align_face(image: &FaceImage, cfg: &AlignConfig) -> Result<FaceImage> {
    let lm = image
        .landmarks
        .ok_or_else(|| failed(image, "eye landmarks missing"))?;
    let all = [lm.left.0, lm.left.1, lm.right.0, lm.right.1];
    if all.iter().any(|v| !v.is_finite()) {
        return Err(failed(image, "non-finite landmark"));
    }
    let (sdx, sdy) = (lm.right.0 - lm.left.0, lm.right.1 - lm.left.1);
    let src_dist = sdx.hypot(sdy);
    if src_dist < 1e-9 {
        return Err(failed(image, "eye landmarks coincide"));
    }
    let canon = cfg.canonical();
    let (ddx, ddy) = (canon.right.0 - canon.left.0, canon.right.1 - canon.left.1);
    let dst_dist = ddx.hypot(ddy);
    if dst_dist <= 0.0 {
        return Err(Error::Config(format!("side {} too small to align", cfg.side)));
    }
    let scale = src_dist / dst_dist;
    let theta = sdy.atan2(sdx) - ddy.atan2(ddx);
    let (sin, cos) = theta.sin_cos();
    let src_mid = ((lm.left.0 + lm.right.0) / 2.0, (lm.left.1 + lm.right.1) / 2.0);
    let dst_mid = ((canon.left.0 + canon.right.0) / 2.0, (canon.left.1 + canon.right.1) / 2.0);

    let side = cfg.side;
    let mut pixels = Vec::with_capacity(side * side);
    for v in 0..side {
        let dy = v as f64 - dst_mid.1;
        for u in 0..side {
            let dx = u as f64 - dst_mid.0;
            let x = src_mid.0 + scale * (cos * dx - sin * dy);
            let y = src_mid.1 + scale * (sin * dx + cos * dy);
            pixels.push(image.sample_bilinear(x, y).clamp(0.0, 1.0));
        }
    }
    Ok(FaceImage {
        image_id: image.image_id.clone(),
        width: side,
        height: side,
        pixels,
        landmarks: Some(canon),
    })
}

/// Centre-crops to a square and rescales to `side` without alignment.
pub fn resize_square(image: &FaceImage, side: usize) -> FaceImage {
    if image.width == side && image.height == side {
        return image.clone();
    }
    let crop = image.width.min(image.height) as f64;
    let x0 = (image.width as f64 - crop) / 2.0;
    let y0 = (image.height as f64 - crop) / 2.0;
    let step = crop / side as f64;
    let mut pixels = Vec::with_capacity(side * side);
    for v in 0..side {
        let y = y0 + (v as f64 + 0.5) * step - 0.5;
        for u in 0..side {
            let x = x0 + (u as f64 + 0.5) * step - 0.5;
            let xc = x.clamp(0.0, image.width as f64 - 1.0);
            let yc = y.clamp(0.0, image.height as f64 - 1.0);
            pixels.push(image.sample_bilinear(xc, yc).clamp(0.0, 1.0));
        }
    }
    FaceImage {
        image_id: image.image_id.clone(),
        width: side,
        height: side,
        pixels,
        landmarks: None,
    }
}

/// Aligns when landmarks are available. Without them the image is either
/// rejected or, with `allow_unaligned`, passed through a centre crop.
pub fn prepare(image: &FaceImage, cfg: &AlignConfig, allow_unaligned: bool) -> Result<FaceImage> {
    match align_face(image, cfg) {
        Ok(out) => Ok(out),
        Err(Error::AlignmentFailed { .. }) if allow_unaligned => Ok(resize_square(image, cfg.side)),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn noise_image(w: usize, h: usize, seed_value: u64) -> FaceImage {
        let mut rng = seed::rng(seed_value);
        let px = (0..w * h).map(|_| rng.random::<f64>()).collect();
        FaceImage::new("n", w, h, px).unwrap()
    }

    #[test]
    fn missing_or_coincident_landmarks_fail() {
        let img = noise_image(32, 32, 1);
        let cfg = AlignConfig::with_side(32);
        assert!(matches!(align_face(&img, &cfg), Err(Error::AlignmentFailed { .. })));
        let same = img.clone().with_landmarks(EyeLandmarks {
            left: (10.0, 10.0),
            right: (10.0, 10.0),
        });
        assert!(matches!(align_face(&same, &cfg), Err(Error::AlignmentFailed { .. })));
        let passed = prepare(&img, &cfg, true).unwrap();
        assert_eq!(passed.side(), Some(32));
        assert!(prepare(&img, &cfg, false).is_err());
    }

    #[test]
    fn horizontal_eyes_are_a_plain_crop_and_rescale() {
        let cfg = AlignConfig::with_side(32);
        let canon = cfg.canonical();
        // source at twice the scale, eyes horizontal
        let img = noise_image(64, 64, 2).with_landmarks(EyeLandmarks {
            left: (canon.left.0 * 2.0, canon.left.1 * 2.0),
            right: (canon.right.0 * 2.0, canon.right.1 * 2.0),
        });
        let out = align_face(&img, &cfg).unwrap();
        let mid_src = ((canon.left.0 + canon.right.0), canon.left.1 * 2.0);
        let mid_dst = ((canon.left.0 + canon.right.0) / 2.0, canon.left.1);
        for v in 0..32 {
            for u in 0..32 {
                let x = mid_src.0 + 2.0 * (u as f64 - mid_dst.0);
                let y = mid_src.1 + 2.0 * (v as f64 - mid_dst.1);
                let expected = img.sample_bilinear(x, y);
                assert!((out.get(u, v) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn aligning_twice_equals_once() {
        let cfg = AlignConfig::with_side(48);
        let img = noise_image(80, 70, 3).with_landmarks(EyeLandmarks {
            left: (25.0, 30.0),
            right: (25.0 + 30.0 * 10f64.to_radians().cos(), 30.0 + 30.0 * 10f64.to_radians().sin()),
        });
        let once = align_face(&img, &cfg).unwrap();
        let twice = align_face(&once, &cfg).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn rotated_bright_spot_returns_to_canonical_position() {
        // oracle: build an upright image with a bright 3x3 block at a known
        // offset from the eye midpoint, then forward-rotate it by 15 degrees
        let side = 128;
        let cfg = AlignConfig::with_side(side);
        let canon = cfg.canonical();
        let mid = ((canon.left.0 + canon.right.0) / 2.0, canon.left.1);
        let offset = (6.0, 30.0);
        let target = (mid.0 + offset.0, mid.1 + offset.1);
        let angle = 15f64.to_radians();
        let (s, c) = angle.sin_cos();
        let rotate = |p: (f64, f64)| {
            let (dx, dy) = (p.0 - mid.0, p.1 - mid.1);
            (mid.0 + c * dx - s * dy, mid.1 + s * dx + c * dy)
        };
        let mut pixels = vec![0.0; side * side];
        for y in 0..side {
            for x in 0..side {
                // inverse rotation of the destination pixel
                let (dx, dy) = (x as f64 - mid.0, y as f64 - mid.1);
                let (ux, uy) = (mid.0 + c * dx + s * dy, mid.1 - s * dx + c * dy);
                if (ux - target.0).abs() <= 1.5 && (uy - target.1).abs() <= 1.5 {
                    pixels[y * side + x] = 1.0;
                }
            }
        }
        let img = FaceImage::new("r", side, side, pixels)
            .unwrap()
            .with_landmarks(EyeLandmarks {
                left: rotate(canon.left),
                right: rotate(canon.right),
            });
        let out = align_face(&img, &cfg).unwrap();
        let (mut sx, mut sy, mut sw) = (0.0, 0.0, 0.0);
        for y in 0..side {
            for x in 0..side {
                let w = out.get(x, y);
                sx += w * x as f64;
                sy += w * y as f64;
                sw += w;
            }
        }
        let (cx, cy) = (sx / sw, sy / sw);
        assert!((cx - target.0).hypot(cy - target.1) <= 1.0, "centroid ({cx}, {cy}) vs {target:?}");
    }

    #[test]
    fn alignment_commutes_with_intensity_scaling() {
        let cfg = AlignConfig::with_side(40);
        let lm = EyeLandmarks {
            left: (20.0, 25.0),
            right: (45.0, 31.0),
        };
        let img = noise_image(64, 64, 4).with_landmarks(lm);
        let mut scaled = img.clone();
        scaled.pixels.iter_mut().for_each(|v| *v *= 0.6);
        let a = align_face(&img, &cfg).unwrap();
        let b = align_face(&scaled, &cfg).unwrap();
        for (x, y) in a.pixels.iter().zip(&b.pixels) {
            assert!((x * 0.6 - y).abs() < 1e-12);
        }
    }
}
