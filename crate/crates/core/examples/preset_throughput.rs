//! Build every architecture preset, report its size and time single-image
//! inference at a chosen input side. Weights are random; only speed matters.
//!
//! ```bash
//! cargo run -p crowdface --example preset_throughput -- [side] [images]
//! ```

use std::time::Instant;

use crowdface::dataset::FaceImage;
use crowdface::model::{preset, Network, ScoreStats, TrainedModel, PRESET_NAMES};

fn main() -> crowdface::Result<()> {
    let side: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(64);
    let n: usize = std::env::args().nth(2).and_then(|a| a.parse().ok()).unwrap_or(20);
    let images: Vec<FaceImage> = (0..n).map(|i| FaceImage::filled(format!("f{i}"), side, (i % 7) as f64 / 7.0)).collect();
    println!("{:<18} {:>12} {:>12}", "preset", "parameters", "images/s");
    for name in PRESET_NAMES {
        let arch = preset(name).expect("listed preset").architecture;
        if arch.validate(side).is_err() {
            println!("{name:<18} {:>12} {:>12}", "-", "too small");
            continue;
        }
        let mut net = Network::build(&arch, side)?;
        net.initialize(1);
        let model = TrainedModel::new(name, net, ScoreStats { mean: 0.5, std: 0.1 }, Vec::new(), None)?;
        let start = Instant::now();
        for img in &images {
            model.predict(img)?;
        }
        let rate = n as f64 / start.elapsed().as_secs_f64();
        println!("{name:<18} {:>12} {:>12.1}", arch.param_count(side), rate);
    }
    Ok(())
}
