use rand::Rng;
use serde::{Deserialize, Serialize};

use super::run::Trial;
use super::space::TrialParams;
use crate::dataset::LabeledImage;
use crate::error::{Error, Result};
use crate::model::{evaluate, train, TrainedModel, TrainingConfig};
use crate::seed;

pub const MAX_VARIANTS: usize = 5;

#[derive(Debug, Clone)]
pub struct RefineConfig {
    /// Must match the base used by the short trials for the refined model to
    /// be at least as good as the trial it starts from.
    pub base: TrainingConfig,
    pub full_epochs: usize,
    pub patience: usize,
    /// Epochs of the short trials. Stopping never fires before this, so the
    /// unperturbed variant replays the trial and then keeps going.
    pub short_epochs: usize,
    /// Perturbed neighbours tried besides the trial itself.
    pub perturbations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefineVariant {
    pub params: TrialParams,
    pub val_r2: Option<f64>,
    pub epochs_run: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Refined {
    pub model: TrainedModel,
    pub params: TrialParams,
    pub val_r2: f64,
    pub variants: Vec<RefineVariant>,
}

/// Small multiplicative or additive nudges around `p`. The architecture is
/// left alone so feasibility is preserved.
pub fn perturb<R: Rng + ?Sized>(p: &TrialParams, rng: &mut R) -> TrialParams {
    let mut sym = |scale: f64| (2.0 * rng.random::<f64>() - 1.0) * scale;
    let mut q = p.clone();
    q.learning_rate = p.learning_rate * 10f64.powf(sym(0.2));
    q.dropout = (p.dropout + sym(0.05)).clamp(0.0, 0.95);
    q.augmentation = (p.augmentation + sym(0.1)).clamp(0.0, 1.0);
    q.sampling_temperature = p.sampling_temperature.map(|t| t * (1.0 + sym(0.2)));
    q
}

/// Full-length training of `best` and up to four perturbed neighbours,
/// all from the trial's seed; returns the best on validation R².
pub fn refine(best: &Trial, train_set: &[LabeledImage], val_set: &[LabeledImage], cfg: &RefineConfig) -> Result<Refined> {
    if cfg.perturbations + 1 > MAX_VARIANTS {
        return Err(Error::Config(format!(
            "at most {} perturbations are allowed, got {}",
            MAX_VARIANTS - 1,
            cfg.perturbations
        )));
    }
    let mut candidates = vec![best.params.clone()];
    for k in 1..=cfg.perturbations {
        let mut rng = seed::rng(seed::derive_indexed(best.seed, "refine", k as u64));
        candidates.push(perturb(&best.params, &mut rng));
    }
    let mut winner: Option<(TrainedModel, TrialParams, f64)> = None;
    let mut variants = Vec::with_capacity(candidates.len());
    for (k, params) in candidates.into_iter().enumerate() {
        let mut tc = params.training_config(&cfg.base);
        tc.seed = best.seed;
        tc.max_epochs = cfg.full_epochs.max(cfg.short_epochs);
        tc.early_stopping_patience = cfg.patience;
        tc.min_epochs = cfg.short_epochs;
        let outcome = train(&params.architecture(), &tc, train_set, val_set)
            .and_then(|m| evaluate(&m, val_set, "val").map(|r| (m, r.r_squared)));
        match outcome {
            Ok((model, r2)) => {
                variants.push(RefineVariant { params: params.clone(), val_r2: Some(r2), epochs_run: model.history.len(), error: None });
                if winner.as_ref().is_none_or(|w| r2 > w.2) {
                    winner = Some((model, params, r2));
                }
            }
            Err(e) if k == 0 => return Err(e),
            Err(e) => variants.push(RefineVariant { params, val_r2: None, epochs_run: 0, error: Some(e.to_string()) }),
        }
    }
    let (model, params, val_r2) = winner.expect("the unperturbed variant succeeded");
    Ok(Refined { model, params, val_r2, variants })
}
