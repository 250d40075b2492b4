//! Run a small tree-structured Parzen search over reduced architectures on
//! synthetic faces, then refine the best trial with a longer training run.
//!
//! ```bash
//! cargo run -p crowdface --example hyperparameter_search -- [budget] [strategy]
//! ```

use crowdface::dataset::{generate_synthetic, join_labels, make_split, SynthConfig};
use crowdface::model::TrainingConfig;
use crowdface::search::{refine, run_search, Range, RefineConfig, SearchConfig, SearchSpace, ShortTraining, Strategy};

fn main() -> crowdface::Result<()> {
    let budget: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(12);
    let strategy: Strategy = std::env::args().nth(2).unwrap_or_else(|| "tpe".into()).parse()?;

    let data = generate_synthetic(&SynthConfig::new(400, 32, 5))?;
    let ids: Vec<String> = data.images.iter().map(|i| i.image_id.clone()).collect();
    let split = make_split(&ids, 5)?;
    let t = &data.manifest.trait_name;
    let train_set = join_labels(&data.images, &data.scores, t, &split.train_ids)?;
    let val_set = join_labels(&data.images, &data.scores, t, &split.val_ids)?;

    // Small widths keep each trial to a fraction of a second.
    let space = SearchSpace {
        image_side: 32,
        log10_learning_rate: Range::new(-3.5, -2.0),
        filter_choices: vec![4, 8, 16],
        segments: Range::new(2, 4),
        fc_width: Range::new(16, 64),
        ..SearchSpace::default()
    };
    let base = TrainingConfig { trait_name: t.clone(), batch_size: 16, ..TrainingConfig::default() };
    let objective = ShortTraining::new(&train_set, &val_set, &base, 3);
    let result = run_search(&space, &SearchConfig::new(budget, strategy, 5), &objective)?;
    for trial in &result.trials {
        let p = &trial.params;
        println!(
            "trial {:>2}  lr {:.1e}  segments {}  fc {}x{}  dropout {:.2}  val R^2 {}",
            trial.trial_id,
            p.learning_rate,
            p.segments.len(),
            p.fc_layers,
            p.fc_width,
            p.dropout,
            trial.val_r2.map_or("failed".into(), |v| format!("{v:.3}"))
        );
    }
    let best = result.best.expect("at least one trial succeeds");
    println!("best: trial {} with val R^2 {:.3}", best.trial_id, best.val_r2.unwrap_or_default());

    let cfg = RefineConfig { base, full_epochs: 8, patience: 3, short_epochs: 3, perturbations: 2 };
    let refined = refine(&best, &train_set, &val_set, &cfg)?;
    for (k, v) in refined.variants.iter().enumerate() {
        println!(
            "variant {k}  lr {:.1e}  dropout {:.2}  epochs {}  val R^2 {}",
            v.params.learning_rate,
            v.params.dropout,
            v.epochs_run,
            v.val_r2.map_or("failed".into(), |r| format!("{r:.3}"))
        );
    }
    println!("refined val R^2 {:.3}", refined.val_r2);
    Ok(())
}
