use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::space::{sample, SearchSpace, TrialParams};
use super::tpe::{propose, warmup_trials, TpeSettings};
use crate::dataset::LabeledImage;
use crate::error::{Error, Result};
use crate::model::{evaluate, train, TrainingConfig};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Tpe,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Tpe => "tpe",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Strategy::Random),
            "tpe" => Ok(Strategy::Tpe),
            other => Err(Error::Config(format!("unknown strategy '{other}' (expected random or tpe)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub val_r2: f64,
    pub epochs_run: usize,
}

/// Scores one point of the space. `seed` is the trial's own seed.
pub trait TrialObjective: Sync {
    fn evaluate(&self, params: &TrialParams, seed: u64) -> Result<TrialOutcome>;
}

/// Short training run followed by validation R² of the best epoch.
pub struct ShortTraining<'a> {
    pub train_set: &'a [LabeledImage],
    pub val_set: &'a [LabeledImage],
    pub base: TrainingConfig,
}

impl<'a> ShortTraining<'a> {
    pub const DEFAULT_EPOCHS: usize = 15;

    /// `base` with `max_epochs = short_epochs` and early stopping disabled.
    pub fn new(train_set: &'a [LabeledImage], val_set: &'a [LabeledImage], base: &TrainingConfig, short_epochs: usize) -> Self {
        let mut base = base.clone();
        base.max_epochs = short_epochs;
        base.early_stopping_patience = 0;
        Self { train_set, val_set, base }
    }
}

impl TrialObjective for ShortTraining<'_> {
    fn evaluate(&self, params: &TrialParams, seed: u64) -> Result<TrialOutcome> {
        let mut cfg = params.training_config(&self.base);
        cfg.seed = seed;
        let model = train(&params.architecture(), &cfg, self.train_set, self.val_set)?;
        let report = evaluate(&model, self.val_set, "val")?;
        Ok(TrialOutcome { val_r2: report.r_squared, epochs_run: model.history.len() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub seed: u64,
    pub params: TrialParams,
    /// Missing when the trial failed.
    pub val_r2: Option<f64>,
    pub epochs_run: usize,
    /// Seconds.
    pub wall_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub strategy: Strategy,
    pub budget: usize,
    pub trials: Vec<Trial>,
    /// Highest val R², earliest trial on ties; `None` if every trial failed.
    pub best: Option<Trial>,
}

impl SearchResult {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("search result serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn best_trial(trials: &[Trial]) -> Option<&Trial> {
    let mut best: Option<&Trial> = None;
    for t in trials {
        if let Some(v) = t.val_r2 {
            if best.is_none_or(|b| v > b.val_r2.expect("best has a score")) {
                best = Some(t);
            }
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub budget: usize,
    pub strategy: Strategy,
    pub seed: u64,
    /// Trials evaluated concurrently. Proposals for a batch only see trials
    /// from earlier batches, so results do not depend on timing.
    pub workers: usize,
    pub tpe: TpeSettings,
    /// Line-delimited JSON, one trial per line. An existing log is resumed.
    pub log_path: Option<PathBuf>,
}

impl SearchConfig {
    pub fn new(budget: usize, strategy: Strategy, seed: u64) -> Self {
        Self { budget, strategy, seed, workers: 1, tpe: TpeSettings::default(), log_path: None }
    }
}

pub fn trial_seed(search_seed: u64, trial_id: usize) -> u64 {
    seed::derive_indexed(search_seed, "trial", trial_id as u64)
}

fn proposal(space: &SearchSpace, cfg: &SearchConfig, trial_id: usize, done: &[Trial]) -> TrialParams {
    let mut rng = seed::rng(seed::derive_indexed(cfg.seed, "proposal", trial_id as u64));
    if cfg.strategy == Strategy::Random || trial_id < warmup_trials(cfg.budget) {
        return sample(space, &mut rng);
    }
    // Failed trials rank below every success so their region is avoided.
    let history: Vec<(TrialParams, f64)> =
        done.iter().map(|t| (t.params.clone(), t.val_r2.unwrap_or(f64::NEG_INFINITY))).collect();
    propose(space, &history, &cfg.tpe, &mut rng).unwrap_or_else(|| sample(space, &mut rng))
}

fn run_trial(objective: &dyn TrialObjective, trial_id: usize, seed: u64, params: TrialParams) -> Trial {
    let start = Instant::now();
    let outcome = objective.evaluate(&params, seed);
    let wall_time = start.elapsed().as_secs_f64();
    match outcome {
        Ok(o) => Trial { trial_id, seed, params, val_r2: Some(o.val_r2), epochs_run: o.epochs_run, wall_time, error: None },
        Err(e) => Trial { trial_id, seed, params, val_r2: None, epochs_run: 0, wall_time, error: Some(e.to_string()) },
    }
}

/// Reads a trial log, dropping a torn final line.
pub fn read_trial_log(path: &Path) -> Result<Vec<Trial>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))?;
    let mut trials = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Trial>(line) {
            Ok(t) => trials.push(t),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => return Err(Error::parse(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok(trials)
}

fn trial_line(t: &Trial) -> String {
    serde_json::to_string(t).expect("trial serializes")
}

/// Loads the resumable prefix of a log and rewrites it cleanly.
fn resume(path: &Path, space: &SearchSpace, cfg: &SearchConfig) -> Result<Vec<Trial>> {
    if !path.exists() {
        File::create(path).map_err(|e| Error::io(path, e))?;
        return Ok(Vec::new());
    }
    let trials = read_trial_log(path)?;
    if trials.len() > cfg.budget {
        return Err(Error::Config(format!(
            "trial log {} already holds {} trials, more than the budget {}",
            path.display(),
            trials.len(),
            cfg.budget
        )));
    }
    for (i, t) in trials.iter().enumerate() {
        let consistent = t.trial_id == i
            && t.seed == trial_seed(cfg.seed, i)
            && t.params == proposal(space, cfg, i, &trials[..batch_start(i, cfg.workers)]);
        if !consistent {
            return Err(Error::Config(format!(
                "trial {i} in {} does not match this search configuration",
                path.display()
            )));
        }
    }
    let mut text = String::new();
    for t in &trials {
        text.push_str(&trial_line(t));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(trials)
}

fn batch_start(trial_id: usize, workers: usize) -> usize {
    trial_id - trial_id % workers.max(1)
}

/// Runs `cfg.budget` trials. Failed trials are recorded and never stop the
/// search. When `cfg.log_path` exists its trials are verified and kept, and
/// the search continues from where the log ends.
pub fn run_search(space: &SearchSpace, cfg: &SearchConfig, objective: &dyn TrialObjective) -> Result<SearchResult> {
    space.validate()?;
    if cfg.budget == 0 {
        return Err(Error::Config("search budget must be at least 1".into()));
    }
    let workers = cfg.workers.max(1);
    let mut trials = match &cfg.log_path {
        Some(p) => resume(p, space, cfg)?,
        None => Vec::new(),
    };
    let mut log = match &cfg.log_path {
        Some(p) => Some(OpenOptions::new().append(true).open(p).map_err(|e| Error::io(p, e))?),
        None => None,
    };
    while trials.len() < cfg.budget {
        let first = trials.len();
        let end = (batch_start(first, workers) + workers).min(cfg.budget);
        let snapshot = &trials[..batch_start(first, workers)];
        let jobs: Vec<(usize, u64, TrialParams)> = (first..end)
            .map(|id| (id, trial_seed(cfg.seed, id), proposal(space, cfg, id, snapshot)))
            .collect();
        let finished: Vec<Trial> = if jobs.len() == 1 {
            jobs.into_iter().map(|(id, s, p)| run_trial(objective, id, s, p)).collect()
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = jobs
                    .into_iter()
                    .map(|(id, s, p)| scope.spawn(move || run_trial(objective, id, s, p)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("trial thread panicked")).collect()
            })
        };
        for t in finished {
            if let (Some(file), Some(path)) = (log.as_mut(), cfg.log_path.as_ref()) {
                writeln!(file, "{}", trial_line(&t))
                    .and_then(|_| file.flush())
                    .map_err(|e| Error::io(path, e))?;
            }
            trials.push(t);
        }
    }
    let best = best_trial(&trials).cloned();
    Ok(SearchResult { strategy: cfg.strategy, budget: cfg.budget, trials, best })
}
