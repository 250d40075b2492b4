//! Per-frame scoring of image sequences with one or more trained models.
//!
//! Frames flow through three stages joined by bounded channels: decode,
//! then detect/align/score on a pool of workers, then an emitter that
//! restores input order.

mod annotate;
mod detect;
mod summary;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use annotate::{annotate_frame, draw_text, text_width};
pub use detect::{select_face, Detection, FaceBox, FaceDetector, FixtureDetector, FullFrameDetector};
pub use summary::{
    histogram, render_histogram, render_series, summarize_stream, write_histogram_csv, write_series_csv, StreamSummary,
    HIST_BINS, HIST_HI, HIST_LO, HIST_WIDTH,
};

use crate::dataset::{align_face, AlignConfig, FaceImage};
use crate::error::{Error, Result};
use crate::model::TrainedModel;

/// One decoded (or undecodable) frame.
#[derive(Debug)]
pub struct Frame {
    pub index: usize,
    pub timestamp: f64,
    pub image: Result<FaceImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScore {
    pub frame_index: usize,
    /// Seconds from the start of the stream.
    pub timestamp: f64,
    /// Model outputs per trait; empty unless a face was found.
    pub raw: BTreeMap<String, f64>,
    /// `(raw - train_mean) / train_std` per trait; empty unless a face was found.
    pub z: BTreeMap<String, f64>,
    pub face_found: bool,
    pub face_box: Option<FaceBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FrameScore {
    fn empty(frame_index: usize, timestamp: f64) -> Self {
        Self { frame_index, timestamp, raw: BTreeMap::new(), z: BTreeMap::new(), face_found: false, face_box: None, error: None }
    }
}

#[derive(Debug, Clone)]
pub struct StreamConfig {
    pub workers: usize,
    /// Capacity of each inter-stage channel.
    pub buffer: usize,
    /// When set, an annotated RGB copy of every frame is written here.
    pub annotate_dir: Option<PathBuf>,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { workers: 1, buffer: 8, annotate_dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub scores: Vec<FrameScore>,
    pub frames: usize,
    /// Seconds spent in [`process_stream`].
    pub wall_time: f64,
    pub fps: f64,
}

/// Trait name to model; every model must expect the same input side.
pub type ModelSet = BTreeMap<String, TrainedModel>;

fn common_side(models: &ModelSet) -> Result<usize> {
    let mut sides = models.values().map(TrainedModel::side);
    let first = sides.next().ok_or_else(|| Error::Config("no models to score with".into()))?;
    if let Some(other) = sides.find(|&s| s != first) {
        return Err(Error::Config(format!("models disagree on input side ({first} vs {other})")));
    }
    Ok(first)
}

/// The single-frame pipeline: detect, align, predict every trait, z-score.
pub fn score_frame(models: &ModelSet, detector: &dyn FaceDetector, frame: &Frame) -> FrameScore {
    let mut out = FrameScore::empty(frame.index, frame.timestamp);
    let image = match &frame.image {
        Ok(img) => img,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let side = match common_side(models) {
        Ok(s) => s,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let Some(det) = select_face(&detector.detect(frame.index, image)) else {
        return out;
    };
    let with_eyes = image.clone().with_landmarks(det.landmarks);
    let aligned = match align_face(&with_eyes, &AlignConfig::with_side(side)) {
        Ok(a) => a,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let mut raw = BTreeMap::new();
    let mut z = BTreeMap::new();
    for (name, model) in models {
        match model.predict(&aligned) {
            Ok(r) => {
                raw.insert(name.clone(), r);
                z.insert(name.clone(), model.zscore(r));
            }
            Err(e) => {
                out.error = Some(e.to_string());
                return out;
            }
        }
    }
    out.raw = raw;
    out.z = z;
    out.face_found = true;
    out.face_box = Some(det.face_box);
    out
}

/// Scores every frame in order. Undecodable frames and per-frame failures
/// become entries with `error` set; the stream always runs to the end.
pub fn process_stream<I>(frames: I, models: &ModelSet, detector: &dyn FaceDetector, cfg: &StreamConfig) -> Result<StreamReport>
where
    I: IntoIterator<Item = Frame>,
    I::IntoIter: Send,
{
    common_side(models)?;
    let start = Instant::now();
    let workers = cfg.workers.max(1);
    let buffer = cfg.buffer.max(1);
    let frames = frames.into_iter();
    let (frame_tx, frame_rx) = sync_channel::<Frame>(buffer);
    let (score_tx, score_rx) = sync_channel::<Result<FrameScore>>(buffer);
    let shared_rx: Mutex<Receiver<Frame>> = Mutex::new(frame_rx);
    let shared_rx = &shared_rx;
    let scores = std::thread::scope(|scope| -> Result<Vec<FrameScore>> {
        scope.spawn(move || {
            for f in frames {
                if frame_tx.send(f).is_err() {
                    break;
                }
            }
        });
        for _ in 0..workers {
            let tx = score_tx.clone();
            let annotate_dir = cfg.annotate_dir.as_deref();
            scope.spawn(move || loop {
                let next = shared_rx.lock().expect("frame queue lock").recv();
                let Ok(frame) = next else { break };
                let score = score_frame(models, detector, &frame);
                let result = match (annotate_dir, &frame.image) {
                    (Some(dir), Ok(img)) => write_annotation(dir, img, &score).map(|_| score),
                    _ => Ok(score),
                };
                if tx.send(result).is_err() {
                    break;
                }
            });
        }
        drop(score_tx);
        emit_in_order(score_rx)
    })?;
    let wall_time = start.elapsed().as_secs_f64();
    let frames = scores.len();
    let fps = if wall_time > 0.0 { frames as f64 / wall_time } else { 0.0 };
    Ok(StreamReport { scores, frames, wall_time, fps })
}

/// Reorders results by frame index. Indices need not start at zero or be
/// contiguous, so results are buffered and sorted once the stream ends.
fn emit_in_order(rx: Receiver<Result<FrameScore>>) -> Result<Vec<FrameScore>> {
    let mut all = Vec::new();
    let mut first_err = None;
    for r in rx {
        match r {
            Ok(s) => all.push(s),
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    all.sort_by_key(|s| s.frame_index);
    Ok(all)
}

fn write_annotation(dir: &Path, frame: &FaceImage, score: &FrameScore) -> Result<()> {
    annotate_frame(frame, score, &dir.join(format!("frame_{:06}.png", score.frame_index)))
}

/// Frames already in memory, stamped at `fps`.
pub fn frames_from_images(images: Vec<FaceImage>, fps: f64) -> impl Iterator<Item = Frame> + Send {
    images.into_iter().enumerate().map(move |(index, img)| Frame { index, timestamp: index as f64 / fps, image: Ok(img) })
}

/// Numbered PNG frames in `dir` (e.g. `frame_0001.png`), ordered by the
/// number in the file name. Decoding happens lazily as frames are pulled.
pub fn png_frames(dir: &Path, fps: f64) -> Result<impl Iterator<Item = Frame> + Send> {
    if !(fps > 0.0) {
        return Err(Error::Config(format!("frame rate {fps} must be positive")));
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<(u64, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let digits: String = stem.chars().filter(char::is_ascii_digit).collect();
        let number = digits.parse().map_err(|_| Error::parse(&path, "frame file name carries no number"))?;
        paths.push((number, path));
    }
    paths.sort();
    Ok(paths.into_iter().enumerate().map(move |(index, (_, path))| Frame {
        index,
        timestamp: index as f64 / fps,
        image: FaceImage::load_png(&path),
    }))
}
