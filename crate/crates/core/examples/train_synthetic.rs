//! Train a reduced MOON-style regressor on planted-patch synthetic faces
//! and report per-epoch R^2 against the analytic ceiling.
//!
//! ```bash
//! cargo run -p crowdface --example train_synthetic -- [n] [side] [epochs] [divisor] [segments]
//! ```

use std::time::Instant;

use crowdface::dataset::{generate_synthetic, join_labels, make_split, SynthConfig};
use crowdface::model::{evaluate, preset, train, TrainingConfig};

fn main() -> crowdface::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let n = args.first().copied().unwrap_or(2000);
    let side = args.get(1).copied().unwrap_or(64);
    let epochs = args.get(2).copied().unwrap_or(30);
    let divisor = args.get(3).copied().unwrap_or(16);
    let segments = args.get(4).copied().unwrap_or(6);

    let synth = SynthConfig::new(n, side, 7);
    let data = generate_synthetic(&synth)?;
    let ids: Vec<String> = data.images.iter().map(|i| i.image_id.clone()).collect();
    let split = make_split(&ids, 7)?;
    let trait_name = &data.manifest.trait_name;
    let train_set = join_labels(&data.images, &data.scores, trait_name, &split.train_ids)?;
    let val_set = join_labels(&data.images, &data.scores, trait_name, &split.val_ids)?;

    let arch = preset("moon").unwrap().architecture.reduced(divisor).truncated(segments);
    println!("architecture: {arch:?}");
    println!("parameters:   {}", arch.param_count(side));
    let var_p = (256.0f64 * 256.0 - 1.0) / (12.0 * 255.0 * 255.0);
    println!(
        "analytic R^2 ceiling: {:.3}",
        var_p / (var_p + synth.noise_sigma * synth.noise_sigma)
    );

    let cfg = TrainingConfig {
        trait_name: trait_name.clone(),
        learning_rate: 1e-3,
        batch_size: 16,
        max_epochs: epochs,
        early_stopping_patience: 5,
        seed: 7,
        ..TrainingConfig::default()
    };
    let start = Instant::now();
    let model = train(&arch, &cfg, &train_set, &val_set)?;
    for rec in &model.history {
        println!(
            "epoch {:>2}  loss {:.5}  train R^2 {:.3}  val R^2 {:.3}",
            rec.epoch, rec.train_loss, rec.train_r2, rec.val_r2
        );
    }
    let report = evaluate(&model, &val_set, "val")?;
    println!(
        "best epoch {:?}, val R^2 {:.3}, {:.1}s",
        model.best_epoch,
        report.r_squared,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
