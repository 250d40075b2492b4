use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FaceImage;
use crate::error::{Error, Result};
use crate::model::Scorer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionConfig {
    /// Box sides in pixels, coarse to fine.
    pub scales: Vec<usize>,
    /// Step between box positions; `None` uses half the box side.
    pub stride: Option<usize>,
    pub fill_value: f64,
}

impl OcclusionConfig {
    /// Boxes of side/2, side/4, side/8 and side/16 (those at least one
    /// pixel wide).
    pub fn default_for(side: usize) -> Self {
        let mut scales: Vec<usize> = [2, 4, 8, 16].iter().map(|d| side / d).filter(|&s| s > 0).collect();
        scales.dedup();
        Self { scales, stride: None, fill_value: 0.5 }
    }

    pub fn single(scale: usize, stride: usize) -> Self {
        Self { scales: vec![scale], stride: Some(stride), fill_value: 0.5 }
    }

    pub fn stride_for(&self, scale: usize) -> usize {
        self.stride.unwrap_or((scale / 2).max(1))
    }

    pub fn validate(&self, side: usize) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Config("occlusion needs at least one box scale".into()));
        }
        for &s in &self.scales {
            if s == 0 || s > side {
                return Err(Error::Config(format!("occlusion box {s} does not fit a {side}x{side} image")));
            }
        }
        if self.stride == Some(0) {
            return Err(Error::Config("occlusion stride must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.fill_value) {
            return Err(Error::Config(format!("fill value {} outside [0, 1]", self.fill_value)));
        }
        Ok(())
    }
}

/// Top-left offsets of a box of `scale` sliding along `side`; the last
/// position is flush with the far edge even when the stride overshoots it.
pub fn box_offsets(side: usize, scale: usize, stride: usize) -> Vec<usize> {
    let last = side - scale;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if v.last() != Some(&last) {
        v.push(last);
    }
    v
}

/// Accumulated absolute score changes, one value per pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub n_images: usize,
    pub config: OcclusionConfig,
}

impl Heatmap {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Sum over the half-open rectangle `[x0, x1) x [y0, y1)`.
    pub fn mass_in(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        (y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))).map(|(x, y)| self.get(x, y)).sum()
    }

    /// One CSV row per image row, full precision.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_grid_csv(path, self.width, &self.values)
    }

    pub fn read_csv(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
        read_grid_csv(path)
    }
}

pub(crate) fn write_grid_csv(path: &Path, width: usize, values: &[f64]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut out = String::with_capacity(values.len() * 8);
    for row in values.chunks(width) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Returns `(width, height, values)`.
pub(crate) fn read_grid_csv(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut values = Vec::new();
    let mut width = None;
    let mut height = 0;
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>().map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1))))
            .collect::<Result<_>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(Error::parse(path, format!("row {} has {} cells", i + 1, row.len())));
        }
        values.extend(row);
        height += 1;
    }
    Ok((width.unwrap_or(0), height, values))
}

fn occluded(image: &FaceImage, x0: usize, y0: usize, scale: usize, fill: f64) -> FaceImage {
    let mut out = image.clone();
    for y in y0..y0 + scale {
        let row = y * image.width;
        out.pixels[row + x0..row + x0 + scale].fill(fill);
    }
    out
}

/// Slides a gray box over `image` at every configured scale and adds the
/// absolute score change to each pixel under the box. Per-scale grids are
/// summed in descending scale order, so the scale order in the config does
/// not affect the result.
pub fn occlusion_map<S: Scorer + ?Sized>(model: &S, image: &FaceImage, cfg: &OcclusionConfig) -> Result<Heatmap> {
    let side = model.side();
    if image.width != side || image.height != side {
        return Err(Error::ShapeMismatch { expected: side, actual: image.width.max(image.height) });
    }
    cfg.validate(side)?;
    let baseline = model.score(image)?;
    let mut scales = cfg.scales.clone();
    scales.sort_unstable_by(|a, b| b.cmp(a));
    let mut values = vec![0.0; side * side];
    for scale in scales {
        let offsets = box_offsets(side, scale, cfg.stride_for(scale));
        let positions: Vec<(usize, usize)> =
            offsets.iter().flat_map(|&y| offsets.iter().map(move |&x| (x, y))).collect();
        let deltas: Vec<f64> = positions
            .par_iter()
            .map(|&(x, y)| model.score(&occluded(image, x, y, scale, cfg.fill_value)).map(|s| (s - baseline).abs()))
            .collect::<Result<_>>()?;
        let mut pass = vec![0.0; side * side];
        for (&(x0, y0), d) in positions.iter().zip(deltas) {
            for y in y0..y0 + scale {
                pass[y * side + x0..y * side + x0 + scale].iter_mut().for_each(|v| *v += d);
            }
        }
        values.iter_mut().zip(&pass).for_each(|(v, p)| *v += p);
    }
    Ok(Heatmap { width: side, height: side, values, n_images: 1, config: cfg.clone() })
}

/// Sum of each pixel's values in ascending order, divided by the count.
/// Sorting first makes the result independent of input order.
fn sorted_mean(columns: &[&[f64]], len: usize) -> Vec<f64> {
    let n = columns.len() as f64;
    let mut scratch = Vec::with_capacity(columns.len());
    (0..len)
        .map(|i| {
            scratch.clear();
            scratch.extend(columns.iter().map(|c| c[i]));
            scratch.sort_by(f64::total_cmp);
            scratch.iter().sum::<f64>() / n
        })
        .collect()
}

/// Pixel-wise mean of the per-image heatmaps, plus the pixel-wise mean face.
pub fn average_heatmap<S: Scorer + ?Sized>(
    model: &S,
    images: &[FaceImage],
    cfg: &OcclusionConfig,
) -> Result<(Heatmap, FaceImage)> {
    let first = images.first().ok_or_else(|| Error::NoData("no images to average".into()))?;
    for img in images {
        if img.width != first.width || img.height != first.height {
            return Err(Error::ShapeMismatch { expected: first.width, actual: img.width.max(img.height) });
        }
    }
    let maps: Vec<Heatmap> = images.iter().map(|img| occlusion_map(model, img, cfg)).collect::<Result<_>>()?;
    let len = first.pixels.len();
    let heat_cols: Vec<&[f64]> = maps.iter().map(|m| m.values.as_slice()).collect();
    let face_cols: Vec<&[f64]> = images.iter().map(|m| m.pixels.as_slice()).collect();
    let heatmap = Heatmap {
        width: first.width,
        height: first.height,
        values: sorted_mean(&heat_cols, len),
        n_images: images.len(),
        config: cfg.clone(),
    };
    let face = FaceImage::new("average", first.width, first.height, sorted_mean(&face_cols, len))?;
    Ok((heatmap, face))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    /// Scores an image by the intensity of one pixel.
    struct Probe {
        side: usize,
        x: usize,
        y: usize,
    }

    impl Scorer for Probe {
        fn side(&self) -> usize {
            self.side
        }
        fn score(&self, image: &FaceImage) -> Result<f64> {
            Ok(image.get(self.x, self.y))
        }
    }

    struct Constant(usize);

    impl Scorer for Constant {
        fn side(&self) -> usize {
            self.0
        }
        fn score(&self, _: &FaceImage) -> Result<f64> {
            Ok(0.3)
        }
    }

    fn noise(side: usize, s: u64) -> FaceImage {
        let mut rng = seed::rng(s);
        FaceImage::new(format!("n{s}"), side, side, (0..side * side).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn offsets_cover_the_far_edge() {
        assert_eq!(box_offsets(16, 4, 2), vec![0, 2, 4, 6, 8, 10, 12]);
        assert_eq!(box_offsets(10, 4, 4), vec![0, 4, 6]);
        assert_eq!(box_offsets(8, 8, 4), vec![0]);
    }

    #[test]
    fn constant_model_gives_zero_map() {
        let m = occlusion_map(&Constant(16), &noise(16, 1), &OcclusionConfig::default_for(16)).unwrap();
        assert!(m.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn probe_map_is_nonzero_exactly_within_reach() {
        let img = noise(16, 2);
        let (px, py, s) = (5, 9, 3);
        let m = occlusion_map(&Probe { side: 16, x: px, y: py }, &img, &OcclusionConfig::single(s, 1)).unwrap();
        let d = (img.get(px, py) - 0.5).abs();
        for y in 0..16 {
            for x in 0..16 {
                // Number of boxes covering both (x, y) and the probe.
                let span = |a: usize, b: usize| {
                    let lo = a.max(b).saturating_sub(s - 1);
                    let hi = a.min(b).min(16 - s);
                    if hi >= lo { hi - lo + 1 } else { 0 }
                };
                let count = span(x, px) * span(y, py);
                assert!((m.get(x, y) - count as f64 * d).abs() < 1e-12, "pixel ({x}, {y})");
                assert_eq!(m.get(x, y) == 0.0, count == 0);
            }
        }
    }

    #[test]
    fn scale_order_does_not_matter() {
        let img = noise(16, 3);
        let model = Probe { side: 16, x: 7, y: 7 };
        let a = OcclusionConfig { scales: vec![8, 4, 2], stride: None, fill_value: 0.5 };
        let b = OcclusionConfig { scales: vec![2, 8, 4], ..a.clone() };
        assert_eq!(occlusion_map(&model, &img, &a).unwrap().values, occlusion_map(&model, &img, &b).unwrap().values);
    }

    #[test]
    fn rejects_oversized_boxes_and_wrong_sides() {
        let img = noise(8, 4);
        assert!(matches!(
            occlusion_map(&Constant(8), &img, &OcclusionConfig::single(9, 1)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            occlusion_map(&Constant(16), &img, &OcclusionConfig::single(2, 1)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn average_is_singleton_idempotent_and_order_free() {
        let model = Probe { side: 16, x: 3, y: 12 };
        let cfg = OcclusionConfig::default_for(16);
        let a = noise(16, 5);
        let b = noise(16, 6);
        let c = noise(16, 7);
        let single = occlusion_map(&model, &a, &cfg).unwrap();
        let (avg1, face1) = average_heatmap(&model, std::slice::from_ref(&a), &cfg).unwrap();
        assert_eq!(avg1.values, single.values);
        assert_eq!(face1.pixels, a.pixels);
        let (avg2, _) = average_heatmap(&model, &[a.clone(), a.clone()], &cfg).unwrap();
        assert_eq!(avg2.values, single.values);
        let (x, fx) = average_heatmap(&model, &[a.clone(), b.clone(), c.clone()], &cfg).unwrap();
        let (y, fy) = average_heatmap(&model, &[c, a, b], &cfg).unwrap();
        assert_eq!(x.values, y.values);
        assert_eq!(fx.pixels, fy.pixels);
        assert_eq!(x.n_images, 3);
    }

    #[test]
    fn average_rejects_mixed_sides() {
        let model = Constant(8);
        let r = average_heatmap(&model, &[noise(8, 1), noise(16, 2)], &OcclusionConfig::default_for(8));
        assert!(r.is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = occlusion_map(&Probe { side: 8, x: 1, y: 2 }, &noise(8, 9), &OcclusionConfig::default_for(8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        m.write_csv(&p).unwrap();
        let (w, h, v) = Heatmap::read_csv(&p).unwrap();
        assert_eq!((w, h), (8, 8));
        assert_eq!(v, m.values);
    }
}
