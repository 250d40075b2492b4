//! Convolutional regressors: architecture, training, evaluation and
//! checkpoints.

pub mod arch;
mod checkpoint;
mod eval;
mod network;
mod ops;
mod train;

pub use arch::{preset, Activation, ArchitectureConfig, Preset, Segment, PRESET_NAMES};
pub use checkpoint::{load, save, CHECKPOINT_VERSION};
pub use eval::{evaluate, evaluate_predictions, EvalReport};
pub use network::{LayerInfo, LayerKind, Network, INPUT_CENTER};
pub use train::{
    fit, train, Adam, EarlyStopping, EpochRecord, EpochTrainer, FitOutcome, Loss, TrainingConfig,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FaceImage;
use crate::error::{Error, Result};

/// Anything that maps a square grayscale image to one score.
pub trait Scorer: Sync {
    fn side(&self) -> usize;
    fn score(&self, image: &FaceImage) -> Result<f64>;
}

pub(crate) fn check_side(expected: usize, image: &FaceImage) -> Result<()> {
    if image.width != expected || image.height != expected {
        return Err(Error::ShapeMismatch {
            expected,
            actual: if image.width == image.height { image.width } else { image.width.max(image.height) },
        });
    }
    Ok(())
}

/// Training-set statistics of the target, used for z-scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreStats {
    pub mean: f64,
    pub std: f64,
}

/// A network plus everything needed to interpret its outputs. Immutable
/// once built; safe to share across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub trait_name: String,
    network: Network,
    stats: ScoreStats,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

impl TrainedModel {
    /// Fails when the score spread is not positive, since z-scores would be
    /// undefined.
    pub fn new(
        trait_name: impl Into<String>,
        network: Network,
        stats: ScoreStats,
        history: Vec<EpochRecord>,
        best_epoch: Option<usize>,
    ) -> Result<Self> {
        if !(stats.std > 0.0 && stats.std.is_finite() && stats.mean.is_finite()) {
            return Err(Error::Config(format!(
                "training score std must be positive and finite (got mean {}, std {})",
                stats.mean, stats.std
            )));
        }
        Ok(Self {
            trait_name: trait_name.into(),
            network,
            stats,
            history,
            best_epoch,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn architecture(&self) -> &ArchitectureConfig {
        self.network.architecture()
    }

    pub fn side(&self) -> usize {
        self.network.side()
    }

    pub fn train_score_mean(&self) -> f64 {
        self.stats.mean
    }

    pub fn train_score_std(&self) -> f64 {
        self.stats.std
    }

    pub fn score_stats(&self) -> ScoreStats {
        self.stats
    }

    pub fn predict(&self, image: &FaceImage) -> Result<f64> {
        check_side(self.side(), image)?;
        Ok(self.network.predict(&image.pixels))
    }

    /// Element-wise equal to [`TrainedModel::predict`]; runs in parallel.
    pub fn predict_batch(&self, images: &[FaceImage]) -> Result<Vec<f64>> {
        for image in images {
            check_side(self.side(), image)?;
        }
        Ok(images
            .par_iter()
            .map(|im| self.network.predict(&im.pixels))
            .collect())
    }

    pub fn zscore(&self, score: f64) -> f64 {
        (score - self.stats.mean) / self.stats.std
    }
}

impl Scorer for TrainedModel {
    fn side(&self) -> usize {
        TrainedModel::side(self)
    }

    fn score(&self, image: &FaceImage) -> Result<f64> {
        self.predict(image)
    }
}
