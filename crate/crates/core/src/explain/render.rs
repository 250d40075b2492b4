use std::path::Path;

use super::filters::min_max;
use super::occlusion::Heatmap;
use crate::dataset::{to_u8, FaceImage};
use crate::error::{Error, Result};

/// Weight of the heatmap colour in the blend.
pub const OVERLAY_ALPHA: f64 = 0.5;

const JET: [(f64, [f64; 3]); 6] = [
    (0.0, [0.0, 0.0, 0.5]),
    (0.125, [0.0, 0.0, 1.0]),
    (0.375, [0.0, 1.0, 1.0]),
    (0.625, [1.0, 1.0, 0.0]),
    (0.875, [1.0, 0.0, 0.0]),
    (1.0, [0.5, 0.0, 0.0]),
];

/// Blue-to-red colour for `t` in [0, 1].
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    for w in JET.windows(2) {
        let (t0, c0) = w[0];
        let (t1, c1) = w[1];
        if t <= t1 {
            let f = (t - t0) / (t1 - t0);
            return [0, 1, 2].map(|i| c0[i] + (c1[i] - c0[i]) * f);
        }
    }
    JET[JET.len() - 1].1
}

/// RGB bytes of the heatmap blended over the face. The heatmap is min-max
/// normalized first; a constant heatmap is treated as all zeros.
pub fn overlay_rgb(heatmap: &Heatmap, face: &FaceImage) -> Result<Vec<u8>> {
    if heatmap.width != face.width || heatmap.height != face.height {
        return Err(Error::ShapeMismatch { expected: face.width, actual: heatmap.width });
    }
    let norm = min_max(&heatmap.values);
    let mut out = Vec::with_capacity(norm.len() * 3);
    for (&g, &t) in face.pixels.iter().zip(&norm) {
        let c = colormap(t);
        for ch in c {
            out.push(to_u8((1.0 - OVERLAY_ALPHA) * g + OVERLAY_ALPHA * ch));
        }
    }
    Ok(out)
}

/// Writes the overlay as an 8-bit RGB PNG.
pub fn render_overlay(heatmap: &Heatmap, face: &FaceImage, out_path: &Path) -> Result<()> {
    let bytes = overlay_rgb(heatmap, face)?;
    if let Some(parent) = out_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::RgbImage::from_raw(face.width as u32, face.height as u32, bytes)
        .expect("buffer size matches dimensions")
        .save(out_path)
        .map_err(|e| Error::Image { path: out_path.to_path_buf(), message: e.to_string() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::OcclusionConfig;

    fn heat(values: Vec<f64>, side: usize) -> Heatmap {
        Heatmap { width: side, height: side, values, n_images: 1, config: OcclusionConfig::default_for(side) }
    }

    fn face(side: usize) -> FaceImage {
        FaceImage::new("f", side, side, (0..side * side).map(|i| i as f64 / (side * side) as f64).collect()).unwrap()
    }

    fn tinted_by_zero(f: &FaceImage) -> Vec<u8> {
        let c = colormap(0.0);
        f.pixels.iter().flat_map(|&g| c.map(|ch| to_u8(0.5 * g + 0.5 * ch))).collect()
    }

    #[test]
    fn zero_and_constant_maps_use_the_zero_colour() {
        let f = face(8);
        assert_eq!(overlay_rgb(&heat(vec![0.0; 64], 8), &f).unwrap(), tinted_by_zero(&f));
        assert_eq!(overlay_rgb(&heat(vec![3.5; 64], 8), &f).unwrap(), tinted_by_zero(&f));
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(colormap(0.0), [0.0, 0.0, 0.5]);
        assert_eq!(colormap(1.0), [0.5, 0.0, 0.0]);
        assert_eq!(colormap(0.5), [0.5, 1.0, 0.5]);
    }

    #[test]
    fn png_bytes_are_deterministic() {
        let f = face(8);
        let h = heat((0..64).map(|i| (i % 7) as f64).collect(), 8);
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.png"), dir.path().join("b.png"));
        render_overlay(&h, &f, &a).unwrap();
        render_overlay(&h, &f, &b).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn mismatched_shapes_fail() {
        assert!(overlay_rgb(&heat(vec![0.0; 16], 4), &face(8)).is_err());
    }
}
