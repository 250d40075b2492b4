//! Train a small model on synthetic faces whose score lives in one patch,
//! then locate that patch by occlusion and dump the filter responses.
//!
//! ```bash
//! cargo run -p crowdface --example occlusion_heatmap -- [out_dir]
//! ```

use std::path::PathBuf;

use crowdface::dataset::{generate_synthetic, join_labels, make_split, SynthConfig};
use crowdface::explain::{average_heatmap, filter_responses, render_overlay, OcclusionConfig};
use crowdface::model::{preset, train, TrainingConfig};

fn main() -> crowdface::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "out/example_occlusion".into()));
    let side = 32;
    let synth = SynthConfig::new(800, side, 9);
    let data = generate_synthetic(&synth)?;
    let ids: Vec<String> = data.images.iter().map(|i| i.image_id.clone()).collect();
    let split = make_split(&ids, 9)?;
    let t = &data.manifest.trait_name;
    let train_set = join_labels(&data.images, &data.scores, t, &split.train_ids)?;
    let val_set = join_labels(&data.images, &data.scores, t, &split.val_ids)?;

    let mut arch = preset("moon").unwrap().architecture.reduced(16).truncated(4);
    arch.dropout = 0.1;
    let cfg = TrainingConfig {
        trait_name: t.clone(),
        learning_rate: 1e-3,
        batch_size: 16,
        max_epochs: 12,
        early_stopping_patience: 4,
        seed: 9,
        ..TrainingConfig::default()
    };
    let model = train(&arch, &cfg, &train_set, &val_set)?;
    println!("val R^2 at best epoch: {:.3}", model.history[model.best_epoch.unwrap_or(1) - 1].val_r2);

    let images: Vec<_> = val_set.iter().map(|l| l.image.clone()).collect();
    let occ = OcclusionConfig::single(side / 8, 2);
    let (heat, face) = average_heatmap(&model, &images, &occ)?;
    let p = synth.patch;
    let (x0, y0, x1, y1) = p.dilate(side / 8, side);
    let share = heat.mass_in(x0, y0, x1, y1) / heat.total();
    println!("planted patch at ({}, {}) size {}; {:.0}% of occlusion mass within its neighbourhood", p.x0, p.y0, p.size, 100.0 * share);

    heat.write_csv(&out.join("heatmap.csv"))?;
    render_overlay(&heat, &face, &out.join("overlay.png"))?;
    let grid = filter_responses(&model, &images[0], None)?;
    grid.export(&out.join("filters"))?;
    println!("wrote {} ({} filters from layer {})", out.display(), grid.filters(), grid.layer);
    Ok(())
}
