use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::FrameScore;
use crate::error::{Error, Result};

pub const HIST_LO: f64 = -4.0;
pub const HIST_HI: f64 = 4.0;
pub const HIST_WIDTH: f64 = 0.5;
pub const HIST_BINS: usize = 16;

/// Counts of z in half-open bins of width 0.5 over [-4, 4). Values below or
/// above the range land in the first or last bin.
pub fn histogram(values: impl IntoIterator<Item = f64>) -> [usize; HIST_BINS] {
    let mut counts = [0; HIST_BINS];
    for z in values {
        let b = ((z - HIST_LO) / HIST_WIDTH).floor();
        let i = if b.is_nan() || b < 0.0 { 0 } else { (b as usize).min(HIST_BINS - 1) };
        counts[i] += 1;
    }
    counts
}

fn bin_edges(i: usize) -> (f64, f64) {
    (HIST_LO + i as f64 * HIST_WIDTH, HIST_LO + (i + 1) as f64 * HIST_WIDTH)
}

fn traits(scores: &[FrameScore]) -> BTreeSet<String> {
    scores.iter().flat_map(|s| s.z.keys().cloned()).collect()
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// `frame_index,timestamp,trait,raw,z`, one row per trait of every frame
/// with a face.
pub fn write_series_csv(scores: &[FrameScore], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let err = |e: csv::Error| Error::parse(path, e);
    w.write_record(["frame_index", "timestamp", "trait", "raw", "z"]).map_err(err)?;
    for s in scores.iter().filter(|s| s.face_found) {
        for (name, z) in &s.z {
            let raw = s.raw.get(name).copied().unwrap_or(f64::NAN);
            w.write_record([s.frame_index.to_string(), s.timestamp.to_string(), name.clone(), raw.to_string(), z.to_string()])
                .map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `trait,bin_lo,bin_hi,count`.
pub fn write_histogram_csv(hists: &BTreeMap<String, [usize; HIST_BINS]>, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    let err = |e: csv::Error| Error::parse(path, e);
    w.write_record(["trait", "bin_lo", "bin_hi", "count"]).map_err(err)?;
    for (name, counts) in hists {
        for (i, c) in counts.iter().enumerate() {
            let (lo, hi) = bin_edges(i);
            w.write_record([name.clone(), lo.to_string(), hi.to_string(), c.to_string()]).map_err(err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [214, 39, 40], [44, 160, 44], [255, 127, 14], [148, 103, 189], [23, 190, 207]];
const PLOT_W: u32 = 640;
const PLOT_H: u32 = 320;
const MARGIN: u32 = 24;

fn canvas() -> RgbImage {
    let mut img = RgbImage::from_pixel(PLOT_W, PLOT_H, Rgb([255, 255, 255]));
    for x in MARGIN..PLOT_W - MARGIN {
        img.put_pixel(x, PLOT_H - MARGIN, Rgb([0, 0, 0]));
    }
    for y in MARGIN..=PLOT_H - MARGIN {
        img.put_pixel(MARGIN, y, Rgb([0, 0, 0]));
    }
    img
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}

/// Line plot of z over frame index, one colour per trait, z clipped to
/// [-4, 4]. The gray line marks z = 0.
pub fn render_series(scores: &[FrameScore], path: &Path) -> Result<()> {
    let mut img = canvas();
    let plot_w = f64::from(PLOT_W - 2 * MARGIN);
    let plot_h = f64::from(PLOT_H - 2 * MARGIN);
    let to_y = |z: f64| (f64::from(MARGIN) + (HIST_HI - z.clamp(HIST_LO, HIST_HI)) / (HIST_HI - HIST_LO) * plot_h).round() as i64;
    line(&mut img, (i64::from(MARGIN), to_y(0.0)), (i64::from(PLOT_W - MARGIN), to_y(0.0)), Rgb([190, 190, 190]));
    let faces: Vec<&FrameScore> = scores.iter().filter(|s| s.face_found).collect();
    if let (Some(first), Some(last)) = (faces.first(), faces.last()) {
        let span = (last.frame_index - first.frame_index).max(1) as f64;
        let to_x = |i: usize| (f64::from(MARGIN) + (i - first.frame_index) as f64 / span * plot_w).round() as i64;
        for (k, name) in traits(scores).iter().enumerate() {
            let color = Rgb(PALETTE[k % PALETTE.len()]);
            let pts: Vec<(i64, i64)> =
                faces.iter().filter_map(|s| s.z.get(name).map(|&z| (to_x(s.frame_index), to_y(z)))).collect();
            for w in pts.windows(2) {
                line(&mut img, w[0], w[1], color);
            }
            if let [only] = pts.as_slice() {
                line(&mut img, *only, *only, color);
            }
        }
    }
    save(&img, path)
}

/// Bar chart of the fixed-bin histograms, traits side by side in each bin.
pub fn render_histogram(hists: &BTreeMap<String, [usize; HIST_BINS]>, path: &Path) -> Result<()> {
    let mut img = canvas();
    let max = hists.values().flat_map(|c| c.iter().copied()).max().unwrap_or(0).max(1) as f64;
    let bin_w = (PLOT_W - 2 * MARGIN) / HIST_BINS as u32;
    let n = hists.len().max(1) as u32;
    let bar_w = (bin_w.saturating_sub(2) / n).max(1);
    let plot_h = f64::from(PLOT_H - 2 * MARGIN);
    for (k, counts) in hists.values().enumerate() {
        let color = Rgb(PALETTE[k % PALETTE.len()]);
        for (i, &c) in counts.iter().enumerate() {
            let h = (c as f64 / max * plot_h).round() as u32;
            let x0 = MARGIN + 1 + i as u32 * bin_w + k as u32 * bar_w;
            for x in x0..(x0 + bar_w).min(PLOT_W - MARGIN) {
                for y in (PLOT_H - MARGIN - h)..(PLOT_H - MARGIN) {
                    img.put_pixel(x, y, color);
                }
            }
        }
    }
    save(&img, path)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSummary {
    pub series_csv: PathBuf,
    pub histogram_csv: PathBuf,
    pub series_png: PathBuf,
    pub histogram_png: PathBuf,
    pub histograms: BTreeMap<String, [usize; HIST_BINS]>,
}

/// Writes `series.csv`, `histogram.csv`, `series.png` and `histogram.png`
/// into `out_dir`.
pub fn summarize_stream(scores: &[FrameScore], out_dir: &Path) -> Result<StreamSummary> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let histograms: BTreeMap<String, [usize; HIST_BINS]> = traits(scores)
        .into_iter()
        .map(|name| {
            let counts = histogram(scores.iter().filter(|s| s.face_found).filter_map(|s| s.z.get(&name).copied()));
            (name, counts)
        })
        .collect();
    let summary = StreamSummary {
        series_csv: out_dir.join("series.csv"),
        histogram_csv: out_dir.join("histogram.csv"),
        series_png: out_dir.join("series.png"),
        histogram_png: out_dir.join("histogram.png"),
        histograms,
    };
    write_series_csv(scores, &summary.series_csv)?;
    write_histogram_csv(&summary.histograms, &summary.histogram_csv)?;
    render_series(scores, &summary.series_png)?;
    render_histogram(&summary.histograms, &summary.histogram_png)?;
    Ok(summary)
}
