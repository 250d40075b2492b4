//! Align off-centre faces to canonical eye positions, make a reproducible
//! 80/10/10 split and show what augmentation does to one image.
//!
//! ```bash
//! cargo run -p crowdface --example dataset_split_and_align -- [out_dir]
//! ```

use std::path::PathBuf;

use crowdface::dataset::{align_face, augment, make_split, AlignConfig, AugmentationConfig, EyeLandmarks, FaceImage};
use crowdface::seed;

/// A dark disc on a light background with two bright "eyes".
fn toy_face(id: &str, w: usize, h: usize, eyes: EyeLandmarks) -> FaceImage {
    let mut img = FaceImage::new(id, w, h, vec![0.8; w * h]).expect("sized buffer");
    let (cx, cy) = ((eyes.left.0 + eyes.right.0) / 2.0, (eyes.left.1 + eyes.right.1) / 2.0);
    let d = eyes.right.0 - eyes.left.0;
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy - 0.4 * d);
            if dx * dx + dy * dy < (1.1 * d) * (1.1 * d) {
                img.set(x, y, 0.35);
            }
            for e in [eyes.left, eyes.right] {
                if (x as f64 - e.0).powi(2) + (y as f64 - e.1).powi(2) < 4.0 {
                    img.set(x, y, 1.0);
                }
            }
        }
    }
    img.with_landmarks(eyes)
}

fn main() -> crowdface::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/example_align".into()));
    let cfg = AlignConfig::with_side(64);
    let canonical = cfg.canonical();
    println!("canonical eyes at {:?} and {:?}", canonical.left, canonical.right);

    let eyes = EyeLandmarks { left: (60.0, 50.0), right: (92.0, 58.0) };
    let raw = toy_face("tilted", 160, 120, eyes);
    let aligned = align_face(&raw, &cfg)?;
    raw.save_png(&out.join("raw.png"))?;
    aligned.save_png(&out.join("aligned.png"))?;
    println!("aligned {}x{} -> {}x{}", raw.width, raw.height, aligned.width, aligned.height);

    let mut rng = seed::rng(3);
    for amount in [0.25, 0.5, 1.0] {
        let a = augment(&aligned, &AugmentationConfig::with_amount(amount), &mut rng);
        a.save_png(&out.join(format!("augmented_{amount}.png")))?;
    }

    let ids: Vec<String> = (0..6300).map(|i| format!("img_{i:05}")).collect();
    let split = make_split(&ids, 42)?;
    println!("split of {}: train {} / val {} / test {}", ids.len(), split.train_ids.len(), split.val_ids.len(), split.test_ids.len());
    split.save(&out.join("split.json"))?;
    println!("wrote {}", out.display());
    Ok(())
}
