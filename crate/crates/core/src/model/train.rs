//! Minibatch training with Adam and validation-R^2 early stopping.
//!
//! The early-stopping driver [`fit`] is written against the
//! [`EpochTrainer`] trait so the stopping contract can be exercised with
//! scripted trainers as well as the real network trainer.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::network::Network;
use super::{evaluate_predictions, ArchitectureConfig, ScoreStats, TrainedModel};
use crate::dataset::{augment, AugmentationConfig, LabeledImage};
use crate::error::{Error, Result};
use crate::{seed, stats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    MeanSquaredError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub trait_name: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without improvement before stopping; 0 disables stopping.
    pub early_stopping_patience: usize,
    pub min_delta: f64,
    /// Early stopping never fires before this many epochs.
    pub min_epochs: usize,
    pub loss: Loss,
    pub augmentation: AugmentationConfig,
    /// When set, each epoch draws `n` examples with replacement, weighted by
    /// `exp(|y - mean| / (std * temperature))`, so low temperatures favour
    /// faces rated far from the average. `None` is a plain shuffle.
    pub sampling_temperature: Option<f64>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            trait_name: "score".into(),
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 30,
            early_stopping_patience: 10,
            min_delta: 1e-4,
            min_epochs: 0,
            loss: Loss::MeanSquaredError,
            augmentation: AugmentationConfig::default(),
            sampling_temperature: None,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn stopping(&self) -> EarlyStopping {
        EarlyStopping {
            patience: self.early_stopping_patience,
            min_delta: self.min_delta,
            min_epochs: self.min_epochs,
        }
    }
}

/// One row of training history. Epochs are 1-based. An R^2 that is
/// undefined (constant predictions) is recorded as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_r2: f64,
    pub val_r2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub min_epochs: usize,
}

pub trait EpochTrainer {
    type Snapshot;
    fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord>;
    fn snapshot(&self) -> Self::Snapshot;
}

#[derive(Debug, Clone)]
pub struct FitOutcome<S> {
    pub best: S,
    pub best_epoch: usize,
    pub best_val_r2: f64,
    pub history: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Runs up to `max_epochs` epochs and keeps the snapshot with the highest
/// validation R^2. The patience counter resets only on improvements larger
/// than `min_delta`.
pub fn fit<T: EpochTrainer>(trainer: &mut T, max_epochs: usize, stopping: &EarlyStopping) -> Result<FitOutcome<T::Snapshot>> {
    if max_epochs == 0 {
        return Err(Error::Config("max_epochs must be at least 1".into()));
    }
    let mut history = Vec::new();
    let mut best: Option<(T::Snapshot, usize, f64)> = None;
    let mut reference = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=max_epochs {
        let rec = trainer.run_epoch(epoch)?;
        history.push(rec);
        let best_val = best.as_ref().map_or(f64::NEG_INFINITY, |b| b.2);
        if rec.val_r2 > best_val {
            best = Some((trainer.snapshot(), epoch, rec.val_r2));
        }
        if rec.val_r2 > reference + stopping.min_delta {
            reference = rec.val_r2;
            stale = 0;
        } else {
            stale += 1;
        }
        if stopping.patience > 0 && stale >= stopping.patience && epoch >= stopping.min_epochs && epoch < max_epochs {
            stopped_early = true;
            break;
        }
    }
    let (best, best_epoch, best_val_r2) = best.expect("at least one epoch ran");
    Ok(FitOutcome {
        best,
        best_epoch,
        best_val_r2,
        history,
        stopped_early,
    })
}

/// Adam with the usual defaults (beta1 0.9, beta2 0.999, eps 1e-8).
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, n: usize) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let step = self.learning_rate * c2.sqrt() / c1;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= step * *m / (v.sqrt() + self.eps * c2.sqrt());
        }
    }
}

fn r2_or_zero(predicted: &[f64], observed: &[f64]) -> f64 {
    evaluate_predictions(predicted, observed).unwrap_or(0.0)
}

struct NetworkTrainer<'a> {
    net: Network,
    adam: Adam,
    cfg: &'a TrainingConfig,
    train_set: &'a [LabeledImage],
    val_set: &'a [LabeledImage],
    val_targets: Vec<f64>,
    sampling_weights: Option<Vec<f64>>,
}

impl NetworkTrainer<'_> {
    fn val_predictions(&self) -> Vec<f64> {
        use rayon::prelude::*;
        self.val_set
            .par_iter()
            .map(|l| self.net.predict(&l.image.pixels))
            .collect()
    }
}

impl EpochTrainer for NetworkTrainer<'_> {
    type Snapshot = Vec<f64>;

    fn run_epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let n = self.train_set.len();
        let mut order_rng = seed::rng(seed::derive_indexed(self.cfg.seed, "epoch-order", epoch as u64));
        let order: Vec<usize> = match &self.sampling_weights {
            Some(weights) => {
                let dist = WeightedIndex::new(weights).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| dist.sample(&mut order_rng)).collect()
            }
            None => {
                let mut o: Vec<usize> = (0..n).collect();
                o.shuffle(&mut order_rng);
                o
            }
        };
        let mut dropout_rng = seed::rng(seed::derive_indexed(self.cfg.seed, "dropout", epoch as u64));
        let mut grad = vec![0.0; self.net.param_count()];
        let mut seen = Vec::with_capacity(n);
        let mut seen_targets = Vec::with_capacity(n);
        let mut sq_err = 0.0;
        let stop = self.net.layers().len();
        for batch in order.chunks(self.cfg.batch_size.max(1)) {
            grad.fill(0.0);
            let scale = 2.0 / batch.len() as f64;
            let mut batch_preds = Vec::with_capacity(batch.len());
            for (slot, &i) in batch.iter().enumerate() {
                let item = &self.train_set[i];
                let augmented;
                let pixels = if self.cfg.augmentation.is_identity() {
                    &item.image.pixels
                } else {
                    let key = (epoch as u64) * n as u64 + (seen.len() + slot) as u64;
                    let mut rng = seed::rng(seed::derive_indexed(self.cfg.seed, "augment", key));
                    augmented = augment(&item.image, &self.cfg.augmentation, &mut rng);
                    &augmented.pixels
                };
                let trace = self.net.forward(pixels, Some(&mut dropout_rng), stop);
                let y = trace.output();
                batch_preds.push(y);
                sq_err += (y - item.target) * (y - item.target);
                self.net.backward(&trace, scale * (y - item.target), &mut grad);
            }
            for &i in batch {
                seen_targets.push(self.train_set[i].target);
            }
            seen.extend(batch_preds);
            self.adam.step(self.net.params_mut(), &grad);
        }
        let train_loss = sq_err / n as f64;
        if !train_loss.is_finite() {
            return Err(Error::TrainingRefused(format!(
                "training diverged at epoch {epoch} (loss {train_loss}); lower the learning rate"
            )));
        }
        let val = self.val_predictions();
        Ok(EpochRecord {
            epoch,
            train_loss,
            train_r2: r2_or_zero(&seen, &seen_targets),
            val_r2: r2_or_zero(&val, &self.val_targets),
        })
    }

    fn snapshot(&self) -> Vec<f64> {
        self.net.params().to_vec()
    }
}

fn check_set(name: &str, set: &[LabeledImage], side: usize) -> Result<Vec<f64>> {
    if set.is_empty() {
        return Err(Error::TrainingRefused(format!("{name} set is empty")));
    }
    for l in set {
        super::check_side(side, &l.image)?;
        if !(0.0..=1.0).contains(&l.target) {
            return Err(Error::TrainingRefused(format!(
                "{name} target {} for {} outside [0, 1]",
                l.target, l.image.image_id
            )));
        }
    }
    let targets: Vec<f64> = set.iter().map(|l| l.target).collect();
    if targets.iter().all(|&t| t == targets[0]) {
        return Err(Error::TrainingRefused(format!(
            "{name} targets are constant, so R^2 is undefined"
        )));
    }
    Ok(targets)
}

/// Trains a fresh network and returns the weights of the best validation
/// epoch. Image side is taken from the training images.
pub fn train(
    architecture: &ArchitectureConfig,
    cfg: &TrainingConfig,
    train_set: &[LabeledImage],
    val_set: &[LabeledImage],
) -> Result<TrainedModel> {
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Config(format!("learning rate {} must be positive", cfg.learning_rate)));
    }
    let side = train_set
        .first()
        .map(|l| l.image.width)
        .ok_or_else(|| Error::TrainingRefused("training set is empty".into()))?;
    let train_targets = check_set("training", train_set, side)?;
    let val_targets = check_set("validation", val_set, side)?;
    let mut net = Network::build(architecture, side)?;
    net.initialize(cfg.seed);
    let score_stats = ScoreStats {
        mean: stats::mean(&train_targets),
        std: stats::population_std(&train_targets),
    };
    net.set_output_bias(score_stats.mean);
    let adam = Adam::new(cfg.learning_rate, net.param_count());
    let sampling_weights = match cfg.sampling_temperature {
        None => None,
        Some(t) if t > 0.0 && t.is_finite() => Some(
            train_targets
                .iter()
                .map(|y| ((y - score_stats.mean).abs() / (score_stats.std * t)).exp())
                .collect(),
        ),
        Some(t) => return Err(Error::Config(format!("sampling temperature {t} must be positive"))),
    };
    let mut trainer = NetworkTrainer {
        net,
        adam,
        cfg,
        train_set,
        val_set,
        val_targets,
        sampling_weights,
    };
    let outcome = fit(&mut trainer, cfg.max_epochs, &cfg.stopping())?;
    let mut net = trainer.net;
    net.set_params(outcome.best)?;
    TrainedModel::new(
        cfg.trait_name.clone(),
        net,
        score_stats,
        outcome.history,
        Some(outcome.best_epoch),
    )
}
