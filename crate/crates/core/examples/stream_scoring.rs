//! Score a synthetic clip in which the planted patch brightens over time,
//! write per-frame scores, summaries and annotated frames.
//!
//! ```bash
//! cargo run -p crowdface --example stream_scoring -- [out_dir] [frames]
//! ```

use std::path::PathBuf;

use crowdface::dataset::{generate_synthetic, join_labels, make_split, FaceImage, SynthConfig};
use crowdface::model::{preset, train, TrainingConfig};
use crowdface::stream::{frames_from_images, process_stream, summarize_stream, FullFrameDetector, ModelSet, StreamConfig};

fn main() -> crowdface::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/example_stream".into()));
    let n_frames: usize = std::env::args().nth(2).and_then(|a| a.parse().ok()).unwrap_or(60);
    let side = 32;
    let synth = SynthConfig::new(600, side, 21);
    let data = generate_synthetic(&synth)?;
    let ids: Vec<String> = data.images.iter().map(|i| i.image_id.clone()).collect();
    let split = make_split(&ids, 21)?;
    let t = &data.manifest.trait_name;
    let train_set = join_labels(&data.images, &data.scores, t, &split.train_ids)?;
    let val_set = join_labels(&data.images, &data.scores, t, &split.val_ids)?;
    let mut arch = preset("moon").unwrap().architecture.reduced(16).truncated(4);
    arch.dropout = 0.1;
    let cfg = TrainingConfig {
        trait_name: t.clone(),
        learning_rate: 1e-3,
        batch_size: 16,
        max_epochs: 10,
        seed: 21,
        ..TrainingConfig::default()
    };
    let mut models = ModelSet::new();
    models.insert(t.clone(), train(&arch, &cfg, &train_set, &val_set)?);

    let p = synth.patch;
    let frames: Vec<FaceImage> = (0..n_frames)
        .map(|k| {
            let mut img = FaceImage::filled(format!("frame_{k:04}"), side, 0.5);
            let level = k as f64 / (n_frames - 1).max(1) as f64;
            for y in p.y0..p.y0 + p.size {
                for x in p.x0..p.x0 + p.size {
                    img.set(x, y, level);
                }
            }
            img
        })
        .collect();
    let stream_cfg = StreamConfig { annotate_dir: Some(out.join("annotated")), ..StreamConfig::default() };
    let report = process_stream(frames_from_images(frames, 30.0), &models, &FullFrameDetector, &stream_cfg)?;
    for s in report.scores.iter().step_by((n_frames / 6).max(1)) {
        println!("frame {:>3}  t={:.2}s  raw {:.3}  z {:+.2}", s.frame_index, s.timestamp, s.raw[t], s.z[t]);
    }
    let summary = summarize_stream(&report.scores, &out)?;
    println!("{} frames at {:.1} frames/s; wrote {}", report.frames, report.fps, summary.series_csv.display());
    Ok(())
}
