//! Command-line entry point.
//!
//! Every subcommand writes into a fixed subdirectory of `--out` and leaves a
//! `manifest.json` there recording the command line, the resolved settings
//! and the seeds used. Failures print one line to stderr,
//! `error kind=<kind> message=<text>`, and exit nonzero.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{
    generate_synthetic, join_labels, load_image_dir, make_split, prepare, read_landmarks, AlignConfig, DataSplit,
    FaceImage, LabeledImage, SynthConfig, DEFAULT_SIDE, SYNTHETIC_TRAIT,
};
use crate::error::{Error, Result};
use crate::explain::{average_heatmap, filter_responses, render_overlay, OcclusionConfig};
use crate::model::{self, preset, ArchitectureConfig, TrainedModel, TrainingConfig, PRESET_NAMES};
use crate::ratings::{self, ConsensusScore};
use crate::search::{self, RefineConfig, SearchConfig, SearchSpace, ShortTraining, Strategy};
use crate::stream::{self, FaceDetector, FixtureDetector, FullFrameDetector, ModelSet, StreamConfig};
use crate::seed;

#[derive(Debug, Parser)]
#[command(name = "crowdface", version, about = "Crowd-consensus face perception models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
struct Common {
    /// Output root; each subcommand writes into its own subdirectory.
    #[arg(long, env = "CROWDFACE_OUT", default_value = "out", global = true)]
    out: PathBuf,
    /// Base seed; every random stream is derived from it.
    #[arg(long, default_value_t = 0, global = true)]
    seed: u64,
    /// Worker threads for parallel stages.
    #[arg(long, default_value_t = 1, global = true)]
    workers: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
struct DataArgs {
    /// Ratings file: raw judgements or consensus scores (CSV or JSONL).
    #[arg(long, env = "CROWDFACE_RATINGS")]
    ratings: PathBuf,
    /// Directory of `<image_id>.png` files.
    #[arg(long, env = "CROWDFACE_IMAGES")]
    images: PathBuf,
    #[arg(long = "trait")]
    trait_name: Option<String>,
    /// Eye landmarks CSV; images are aligned when given.
    #[arg(long, env = "CROWDFACE_LANDMARKS")]
    landmarks: Option<PathBuf>,
    /// Split manifest; one is derived from --seed when absent.
    #[arg(long, env = "CROWDFACE_SPLIT")]
    split: Option<PathBuf>,
    /// Input side; defaults to the side of the first image when square.
    #[arg(long)]
    side: Option<usize>,
    /// Centre-crop images that have no landmarks instead of failing.
    #[arg(long)]
    allow_unaligned: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Aggregate raw ratings into per-image consensus scores.
    Ingest {
        #[arg(long, env = "CROWDFACE_RATINGS")]
        ratings: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Per-trait rating statistics and split-half reliability.
    Stats {
        #[arg(long, env = "CROWDFACE_RATINGS")]
        ratings: PathBuf,
        /// Restrict to the training ids of this split.
        #[arg(long, env = "CROWDFACE_SPLIT")]
        split: Option<PathBuf>,
        #[arg(long = "trait")]
        trait_name: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Write a train/validation/test split manifest.
    Split {
        /// Split the image ids found in this ratings file.
        #[arg(long, env = "CROWDFACE_RATINGS")]
        ratings: Option<PathBuf>,
        /// Split the image ids of the PNGs in this directory.
        #[arg(long, env = "CROWDFACE_IMAGES")]
        images: Option<PathBuf>,
        /// Split the ids img_00000 .. img_{n-1}.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train one model and write a checkpoint plus history.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Hyperparameter search followed by refinement of the best trial.
    Search {
        #[command(flatten)]
        data: DataArgs,
        /// Search space TOML; defaults are used when absent.
        #[arg(long, env = "CROWDFACE_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 30)]
        budget: usize,
        #[arg(long, default_value = "tpe")]
        strategy: String,
        /// Epochs per short trial.
        #[arg(long, default_value_t = ShortTraining::DEFAULT_EPOCHS)]
        epochs: usize,
        /// Patience of the refinement runs.
        #[arg(long, default_value_t = 10)]
        patience: usize,
        #[arg(long, default_value_t = 30)]
        refine_epochs: usize,
        /// Perturbed neighbours tried during refinement (0 to 4).
        #[arg(long, default_value_t = 2)]
        refine_variants: usize,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on one partition.
    Eval {
        #[arg(long, env = "CROWDFACE_CHECKPOINT")]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Partition of the split to evaluate: train, val, test or all.
        #[arg(long, default_value = "test")]
        partition: String,
        #[command(flatten)]
        common: Common,
    },
    /// Occlusion heatmaps, averaged overlay and filter responses.
    Explain {
        #[arg(long, env = "CROWDFACE_CHECKPOINT")]
        checkpoint: PathBuf,
        #[arg(long, env = "CROWDFACE_IMAGES")]
        images: PathBuf,
        #[arg(long, env = "CROWDFACE_LANDMARKS")]
        landmarks: Option<PathBuf>,
        #[arg(long)]
        allow_unaligned: bool,
        /// Use only the validation ids of this split.
        #[arg(long, env = "CROWDFACE_SPLIT")]
        split: Option<PathBuf>,
        /// Number of images averaged.
        #[arg(long, default_value_t = 100)]
        limit: usize,
        /// Convolutional layer for filter responses; defaults to the last.
        #[arg(long)]
        layer: Option<usize>,
        /// Occlusion box sides; defaults to side/2, /4, /8, /16.
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<usize>>,
        #[arg(long)]
        stride: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a directory of numbered frame PNGs.
    Stream {
        /// One or more checkpoints, one per trait.
        #[arg(long, env = "CROWDFACE_CHECKPOINT", value_delimiter = ',', required = true)]
        checkpoint: Vec<PathBuf>,
        /// Directory of numbered frame PNGs.
        #[arg(long, env = "CROWDFACE_IMAGES")]
        images: PathBuf,
        /// JSON detections sidecar; frames are treated as aligned faces when absent.
        #[arg(long, env = "CROWDFACE_DETECTIONS")]
        detections: Option<PathBuf>,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        /// Also write annotated frames.
        #[arg(long)]
        annotate: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a synthetic dataset with a planted score-bearing patch.
    Synth {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 64)]
        side: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
struct ModelArgs {
    /// Architecture preset.
    #[arg(long, default_value = "moon")]
    preset: String,
    /// TOML with optional `side`, `[architecture]` and `[training]` tables;
    /// overrides the preset.
    #[arg(long, env = "CROWDFACE_CONFIG")]
    config: Option<PathBuf>,
    /// Divide every filter count and dense width by this factor.
    #[arg(long, default_value_t = 1)]
    shrink: usize,
    /// Keep only the first N convolutional segments.
    #[arg(long)]
    segments: Option<usize>,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Augmentation amount in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    augment: f64,
}

/// Contents of a `--config` file for `train`.
#[derive(Debug, Clone, Default, Deserialize, Serialize)]
struct TrainFile {
    side: Option<usize>,
    architecture: Option<ArchitectureConfig>,
    training: Option<TrainingConfig>,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Runs the command line and returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("error kind=usage message={}", one_line(&first));
            return 2;
        }
    };
    let argv_text: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, &argv_text) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error kind={} message={}", e.kind(), one_line(&e.to_string()));
            1
        }
    }
}

fn set_workers(workers: usize) {
    // The global pool can only be configured once per process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build_global();
}

fn out_dir(common: &Common, name: &str) -> Result<PathBuf> {
    let dir = common.out.join(name);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_manifest(dir: &Path, command: &str, argv: &[String], common: &Common, settings: serde_json::Value, outputs: &[&str]) -> Result<()> {
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "argv": argv,
        "seed": common.seed,
        "workers": common.workers,
        "settings": settings,
        "outputs": outputs,
    });
    write_json(&dir.join("manifest.json"), &manifest)
}

fn run(command: Command, argv: &[String]) -> Result<()> {
    match command {
        Command::Ingest { ratings, common } => ingest(&ratings, &common, argv),
        Command::Stats { ratings, split, trait_name, common } => stats(&ratings, split.as_deref(), trait_name.as_deref(), &common, argv),
        Command::Split { ratings, images, n, common } => split(ratings.as_deref(), images.as_deref(), n, &common, argv),
        Command::Train { data, model, common } => train(&data, &model, &common, argv),
        Command::Search { data, config, budget, strategy, epochs, patience, refine_epochs, refine_variants, batch_size, common } => {
            let opts = SearchOpts { config, budget, strategy, epochs, patience, refine_epochs, refine_variants, batch_size };
            run_search(&data, &opts, &common, argv)
        }
        Command::Eval { checkpoint, data, partition, common } => eval(&checkpoint, &data, &partition, &common, argv),
        Command::Explain { checkpoint, images, landmarks, allow_unaligned, split, limit, layer, scales, stride, common } => {
            let opts = ExplainOpts { images, landmarks, allow_unaligned, split, limit, layer, scales, stride };
            explain(&checkpoint, &opts, &common, argv)
        }
        Command::Stream { checkpoint, images, detections, fps, annotate, common } => {
            run_stream(&checkpoint, &images, detections.as_deref(), fps, annotate, &common, argv)
        }
        Command::Synth { n, side, noise, common } => synth(n, side, noise, &common, argv),
    }
}

fn ingest(ratings_path: &Path, common: &Common, argv: &[String]) -> Result<()> {
    let records = ratings::read_ratings(ratings_path)?;
    let scores = ratings::aggregate(&records)?;
    let dir = out_dir(common, "consensus")?;
    ratings::write_consensus(&dir.join("consensus.csv"), &scores)?;
    let traits: BTreeSet<&str> = scores.iter().map(|s| s.trait_name.as_str()).collect();
    let images: BTreeSet<&str> = scores.iter().map(|s| s.image_id.as_str()).collect();
    println!("{} ratings -> {} consensus scores ({} images, traits {:?})", records.len(), scores.len(), images.len(), traits);
    write_manifest(&dir, "ingest", argv, common, json!({ "ratings": ratings_path }), &["consensus.csv"])
}

#[derive(Serialize)]
struct StatsRow {
    #[serde(flatten)]
    stats: ratings::TraitStats,
    n_images: usize,
    reliability: Option<ratings::ReliabilityReport>,
}

fn stats(ratings_path: &Path, split_path: Option<&Path>, only: Option<&str>, common: &Common, argv: &[String]) -> Result<()> {
    let raw = read_raw_if_any(ratings_path)?;
    let mut scores = ratings::read_scores_any(ratings_path)?;
    let mut raw = raw;
    if let Some(p) = split_path {
        let keep: BTreeSet<String> = DataSplit::load(p)?.train_ids.into_iter().collect();
        scores.retain(|s| keep.contains(&s.image_id));
        if let Some(r) = raw.as_mut() {
            r.retain(|rec| keep.contains(&rec.image_id));
        }
    }
    let traits: Vec<String> = match only {
        Some(t) => vec![t.to_string()],
        None => scores.iter().map(|s| s.trait_name.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let mut rows = Vec::new();
    for t in &traits {
        let st = ratings::trait_stats(&scores, t)?;
        let n_images = scores.iter().filter(|s| &s.trait_name == t).count();
        let reliability = match &raw {
            Some(r) => ratings::split_half_reliability(r, t, seed::derive(common.seed, "stats-reliability")).ok(),
            None => None,
        };
        rows.push(StatsRow { stats: st, n_images, reliability });
    }
    let dir = out_dir(common, "stats")?;
    let mut table = format!(
        "{:<20} {:>7} {:>6} {:>6} {:>9} {:>10} {:>12}\n",
        "trait", "images", "mean", "std", "mean_std", "mean_count", "split_half_r2"
    );
    for r in &rows {
        let rel = r.reliability.as_ref().map_or("-".to_string(), |x| format!("{:.3}", x.r_squared));
        table.push_str(&format!(
            "{:<20} {:>7} {:>6.2} {:>6.2} {:>9.2} {:>10.2} {:>12}\n",
            r.stats.trait_name,
            r.n_images,
            r.stats.mean_of_ratings,
            r.stats.std_of_ratings,
            r.stats.mean_std_of_ratings,
            r.stats.mean_num_of_ratings,
            rel
        ));
    }
    print!("{table}");
    std::fs::write(dir.join("stats.txt"), &table).map_err(|e| Error::io(dir.join("stats.txt"), e))?;
    write_json(&dir.join("stats.json"), &rows)?;
    write_manifest(
        &dir,
        "stats",
        argv,
        common,
        json!({ "ratings": ratings_path, "split": split_path, "traits": traits }),
        &["stats.txt", "stats.json"],
    )
}

/// Raw judgements when the file holds them, `None` for consensus files.
fn read_raw_if_any(path: &Path) -> Result<Option<Vec<ratings::RatingRecord>>> {
    match ratings::read_ratings(path) {
        Ok(r) => Ok(Some(r)),
        Err(Error::Parse { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn split(ratings_path: Option<&Path>, images: Option<&Path>, n: Option<usize>, common: &Common, argv: &[String]) -> Result<()> {
    let ids: Vec<String> = match (ratings_path, images, n) {
        (Some(p), None, None) => {
            ratings::read_scores_any(p)?.into_iter().map(|s| s.image_id).collect::<BTreeSet<_>>().into_iter().collect()
        }
        (None, Some(d), None) => load_image_dir(d)?.into_iter().map(|i| i.image_id).collect(),
        (None, None, Some(n)) => (0..n).map(|i| format!("img_{i:05}")).collect(),
        _ => return Err(Error::Config("split needs exactly one of --ratings, --images or --n".into())),
    };
    let s = make_split(&ids, common.seed)?;
    let dir = out_dir(common, "split")?;
    s.save(&dir.join("split.json"))?;
    println!("train {} / val {} / test {}", s.train_ids.len(), s.val_ids.len(), s.test_ids.len());
    write_manifest(
        &dir,
        "split",
        argv,
        common,
        json!({ "ratings": ratings_path, "images": images, "n": n, "n_ids": ids.len() }),
        &["split.json"],
    )
}

/// Labeled, prepared data with its split.
struct Prepared {
    trait_name: String,
    side: usize,
    split: DataSplit,
    images: Vec<FaceImage>,
    scores: Vec<ConsensusScore>,
}

impl Prepared {
    fn partition(&self, name: &str) -> Result<Vec<LabeledImage>> {
        let ids: Vec<String> = match name {
            "train" => self.split.train_ids.clone(),
            "val" => self.split.val_ids.clone(),
            "test" => self.split.test_ids.clone(),
            "all" => {
                let mut all = self.split.train_ids.clone();
                all.extend(self.split.val_ids.iter().cloned());
                all.extend(self.split.test_ids.iter().cloned());
                all.sort();
                all
            }
            other => return Err(Error::Config(format!("unknown partition '{other}' (train, val, test or all)"))),
        };
        join_labels(&self.images, &self.scores, &self.trait_name, &ids)
    }
}

fn pick_trait(scores: &[ConsensusScore], requested: Option<&str>) -> Result<String> {
    let traits: BTreeSet<&str> = scores.iter().map(|s| s.trait_name.as_str()).collect();
    match requested {
        Some(t) if traits.contains(t) => Ok(t.to_string()),
        Some(t) => Err(Error::NoData(format!("trait '{t}' not in ratings (found {traits:?})"))),
        None if traits.len() == 1 => Ok(traits.into_iter().next().expect("one trait").to_string()),
        None => Err(Error::Config(format!("--trait is required; ratings hold {traits:?}"))),
    }
}

fn prepare_images(dir: &Path, landmarks: Option<&Path>, side: Option<usize>, allow_unaligned: bool) -> Result<(usize, Vec<FaceImage>)> {
    let mut images = load_image_dir(dir)?;
    if images.is_empty() {
        return Err(Error::NoData(format!("no PNG images in {}", dir.display())));
    }
    if let Some(p) = landmarks {
        let lm = read_landmarks(p)?;
        for img in &mut images {
            if let Some(l) = lm.get(&img.image_id) {
                img.landmarks = Some(*l);
            }
        }
    }
    let side = side.unwrap_or_else(|| images[0].side().unwrap_or(DEFAULT_SIDE));
    let cfg = AlignConfig::with_side(side);
    let prepared = images
        .iter()
        .map(|img| {
            if img.landmarks.is_none() && img.side() == Some(side) {
                Ok(img.clone())
            } else {
                prepare(img, &cfg, allow_unaligned)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((side, prepared))
}

fn load_data(data: &DataArgs, common: &Common) -> Result<Prepared> {
    let scores = ratings::read_scores_any(&data.ratings)?;
    let trait_name = pick_trait(&scores, data.trait_name.as_deref())?;
    let (side, images) = prepare_images(&data.images, data.landmarks.as_deref(), data.side, data.allow_unaligned)?;
    let split = match &data.split {
        Some(p) => DataSplit::load(p)?,
        None => {
            let with_image: BTreeSet<&str> = images.iter().map(|i| i.image_id.as_str()).collect();
            let ids: Vec<String> = scores
                .iter()
                .filter(|s| s.trait_name == trait_name && with_image.contains(s.image_id.as_str()))
                .map(|s| s.image_id.clone())
                .collect();
            make_split(&ids, common.seed)?
        }
    };
    Ok(Prepared { trait_name, side, split, images, scores })
}

fn resolve_model(args: &ModelArgs, side: usize, trait_name: &str, common: &Common) -> Result<(usize, ArchitectureConfig, TrainingConfig)> {
    let file: TrainFile = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&text).map_err(|e| Error::parse(p, e))?
        }
        None => TrainFile::default(),
    };
    let p = preset(&args.preset)
        .ok_or_else(|| Error::Config(format!("unknown preset '{}' (known: {})", args.preset, PRESET_NAMES.join(", "))))?;
    let mut arch = file.architecture.unwrap_or(p.architecture);
    if args.shrink > 1 {
        arch = arch.reduced(args.shrink);
    }
    if let Some(n) = args.segments {
        arch = arch.truncated(n);
    }
    let mut cfg = file.training.unwrap_or_else(|| TrainingConfig {
        learning_rate: args.learning_rate.unwrap_or(p.learning_rate),
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        early_stopping_patience: args.patience,
        ..TrainingConfig::default()
    });
    if args.config.is_none() {
        cfg.augmentation.amount = args.augment;
    }
    cfg.trait_name = trait_name.to_string();
    cfg.seed = seed::derive(common.seed, "train");
    let side = file.side.unwrap_or(side);
    arch.validate(side)?;
    Ok((side, arch, cfg))
}

fn write_history(path: &Path, model: &TrainedModel) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for rec in &model.history {
        w.serialize(rec).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn train(data: &DataArgs, args: &ModelArgs, common: &Common, argv: &[String]) -> Result<()> {
    set_workers(common.workers);
    let prepared = load_data(data, common)?;
    let (side, arch, cfg) = resolve_model(args, prepared.side, &prepared.trait_name, common)?;
    if side != prepared.side {
        return Err(Error::Config(format!("config side {side} differs from prepared image side {}", prepared.side)));
    }
    let train_set = prepared.partition("train")?;
    let val_set = prepared.partition("val")?;
    println!(
        "training {} on {} images (val {}), side {side}, {} parameters",
        prepared.trait_name,
        train_set.len(),
        val_set.len(),
        arch.param_count(side)
    );
    let model = model::train(&arch, &cfg, &train_set, &val_set)?;
    for r in &model.history {
        println!("epoch {} train_loss={:.6} train_r2={:.4} val_r2={:.4}", r.epoch, r.train_loss, r.train_r2, r.val_r2);
    }
    let dir = out_dir(common, "train")?;
    model::save(&model, &dir.join("model.ckpt"))?;
    write_history(&dir.join("history.csv"), &model)?;
    prepared.split.save(&dir.join("split.json"))?;
    println!("best epoch {:?}", model.best_epoch);
    write_manifest(
        &dir,
        "train",
        argv,
        common,
        json!({ "data": data, "side": side, "architecture": arch, "training": cfg }),
        &["model.ckpt", "history.csv", "split.json"],
    )
}

struct SearchOpts {
    config: Option<PathBuf>,
    budget: usize,
    strategy: String,
    epochs: usize,
    patience: usize,
    refine_epochs: usize,
    refine_variants: usize,
    batch_size: usize,
}

fn run_search(data: &DataArgs, opts: &SearchOpts, common: &Common, argv: &[String]) -> Result<()> {
    let prepared = load_data(data, common)?;
    let strategy: Strategy = opts.strategy.parse()?;
    let mut space = match &opts.config {
        Some(p) => SearchSpace::load(p)?,
        None => SearchSpace::default(),
    };
    space.image_side = prepared.side;
    space.validate()?;
    let train_set = prepared.partition("train")?;
    let val_set = prepared.partition("val")?;
    let base = TrainingConfig {
        trait_name: prepared.trait_name.clone(),
        batch_size: opts.batch_size,
        ..TrainingConfig::default()
    };
    let objective = ShortTraining::new(&train_set, &val_set, &base, opts.epochs);
    let dir = out_dir(common, "search")?;
    let mut cfg = SearchConfig::new(opts.budget, strategy, seed::derive(common.seed, "search"));
    cfg.workers = common.workers.max(1);
    cfg.log_path = Some(dir.join("trials.jsonl"));
    let result = search::run_search(&space, &cfg, &objective)?;
    for t in &result.trials {
        match t.val_r2 {
            Some(v) => println!("trial {} val_r2={v:.4} epochs={} ({:.1}s)", t.trial_id, t.epochs_run, t.wall_time),
            None => println!("trial {} failed: {}", t.trial_id, t.error.as_deref().unwrap_or("unknown")),
        }
    }
    result.save(&dir.join("summary.json"))?;
    let best = result.best.as_ref().ok_or_else(|| Error::NoData("every search trial failed".into()))?;
    println!("best trial {} val_r2={:.4}; refining", best.trial_id, best.val_r2.unwrap_or(f64::NAN));
    let refine_cfg = RefineConfig {
        base,
        full_epochs: opts.refine_epochs,
        patience: opts.patience,
        short_epochs: opts.epochs,
        perturbations: opts.refine_variants,
    };
    let refined = search::refine(best, &train_set, &val_set, &refine_cfg)?;
    println!("refined val_r2={:.4}", refined.val_r2);
    model::save(&refined.model, &dir.join("best.ckpt"))?;
    write_json(&dir.join("refine.json"), &json!({ "val_r2": refined.val_r2, "params": refined.params, "variants": refined.variants }))?;
    write_manifest(
        &dir,
        "search",
        argv,
        common,
        json!({
            "data": data,
            "space": space,
            "budget": opts.budget,
            "strategy": strategy,
            "short_epochs": opts.epochs,
            "refine_epochs": opts.refine_epochs,
            "patience": opts.patience,
            "refine_variants": opts.refine_variants,
            "search_seed": cfg.seed,
        }),
        &["trials.jsonl", "summary.json", "refine.json", "best.ckpt"],
    )
}

fn eval(checkpoint: &Path, data: &DataArgs, partition: &str, common: &Common, argv: &[String]) -> Result<()> {
    set_workers(common.workers);
    let m = model::load(checkpoint)?;
    let mut data = data.clone();
    data.side = Some(m.side());
    if data.trait_name.is_none() {
        data.trait_name = Some(m.trait_name.clone());
    }
    let prepared = load_data(&data, common)?;
    let set = prepared.partition(partition)?;
    let report = model::evaluate(&m, &set, partition)?;
    let line = format!("{:<20} {:>6} {:>7} {:>8}\n{:<20} {:>6} {:>7} {:>8.4}\n", "trait", "split", "images", "R2", report.trait_name, report.split, report.n_images, report.r_squared);
    print!("{line}");
    let dir = out_dir(common, "eval")?;
    write_json(&dir.join("report.json"), &report)?;
    write_manifest(
        &dir,
        "eval",
        argv,
        common,
        json!({ "checkpoint": checkpoint, "data": data, "partition": partition }),
        &["report.json"],
    )
}

struct ExplainOpts {
    images: PathBuf,
    landmarks: Option<PathBuf>,
    allow_unaligned: bool,
    split: Option<PathBuf>,
    limit: usize,
    layer: Option<usize>,
    scales: Option<Vec<usize>>,
    stride: Option<usize>,
}

fn explain(checkpoint: &Path, opts: &ExplainOpts, common: &Common, argv: &[String]) -> Result<()> {
    set_workers(common.workers);
    let m = model::load(checkpoint)?;
    let (_, mut images) = prepare_images(&opts.images, opts.landmarks.as_deref(), Some(m.side()), opts.allow_unaligned)?;
    if let Some(p) = &opts.split {
        let keep: BTreeSet<String> = DataSplit::load(p)?.val_ids.into_iter().collect();
        images.retain(|i| keep.contains(&i.image_id));
    }
    images.truncate(opts.limit.max(1));
    let mut cfg = OcclusionConfig::default_for(m.side());
    if let Some(s) = &opts.scales {
        cfg.scales = s.clone();
    }
    cfg.stride = opts.stride;
    let (heat, face) = average_heatmap(&m, &images, &cfg)?;
    let dir = out_dir(common, "explain")?;
    heat.write_csv(&dir.join("heatmap.csv"))?;
    render_overlay(&heat, &face, &dir.join("overlay.png"))?;
    face.save_png(&dir.join("average_face.png"))?;
    let grid = filter_responses(&m, &images[0], opts.layer)?;
    grid.export(&dir.join("filters"))?;
    println!(
        "averaged {} images over scales {:?}; filters from layer {} ({} maps of side {})",
        heat.n_images,
        cfg.scales,
        grid.layer,
        grid.filters(),
        grid.side
    );
    write_manifest(
        &dir,
        "explain",
        argv,
        common,
        json!({
            "checkpoint": checkpoint,
            "images": opts.images,
            "split": opts.split,
            "image_ids": images.iter().map(|i| i.image_id.clone()).collect::<Vec<_>>(),
            "occlusion": cfg,
            "filter_layer": grid.layer,
        }),
        &["heatmap.csv", "overlay.png", "average_face.png", "filters/"],
    )
}

fn run_stream(
    checkpoints: &[PathBuf],
    frames_dir: &Path,
    detections: Option<&Path>,
    fps: f64,
    annotate: bool,
    common: &Common,
    argv: &[String],
) -> Result<()> {
    set_workers(common.workers);
    let mut models = ModelSet::new();
    for p in checkpoints {
        let m = model::load(p)?;
        if models.contains_key(&m.trait_name) {
            return Err(Error::Config(format!("two checkpoints score trait '{}'", m.trait_name)));
        }
        models.insert(m.trait_name.clone(), m);
    }
    let fixture;
    let detector: &dyn FaceDetector = match detections {
        Some(p) => {
            fixture = FixtureDetector::load(p)?;
            &fixture
        }
        None => &FullFrameDetector,
    };
    let dir = out_dir(common, "stream")?;
    let cfg = StreamConfig {
        workers: common.workers.max(1),
        annotate_dir: annotate.then(|| dir.join("annotated")),
        ..StreamConfig::default()
    };
    let report = stream::process_stream(stream::png_frames(frames_dir, fps)?, &models, detector, &cfg)?;
    let path = dir.join("scores.jsonl");
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for s in &report.scores {
        writeln!(f, "{}", serde_json::to_string(s).expect("score serializes")).map_err(|e| Error::io(&path, e))?;
    }
    stream::summarize_stream(&report.scores, &dir)?;
    let faces = report.scores.iter().filter(|s| s.face_found).count();
    let errors = report.scores.iter().filter(|s| s.error.is_some()).count();
    println!("{} frames, {faces} with a face, {errors} errors, {:.2} frames/s", report.frames, report.fps);
    let mut outputs = vec!["scores.jsonl", "series.csv", "histogram.csv", "series.png", "histogram.png"];
    if annotate {
        outputs.push("annotated/");
    }
    write_manifest(
        &dir,
        "stream",
        argv,
        common,
        json!({
            "checkpoints": checkpoints,
            "frames": frames_dir,
            "detections": detections,
            "fps": fps,
            "frames_processed": report.frames,
            "wall_time": report.wall_time,
            "throughput_fps": report.fps,
        }),
        &outputs,
    )
}

fn synth(n: usize, side: usize, noise: f64, common: &Common, argv: &[String]) -> Result<()> {
    let mut cfg = SynthConfig::new(n, side, seed::derive(common.seed, "synth"));
    cfg.noise_sigma = noise;
    let data = generate_synthetic(&cfg)?;
    let dir = out_dir(common, "synth")?;
    for img in &data.images {
        img.save_png(&dir.join("images").join(format!("{}.png", img.image_id)))?;
    }
    ratings::write_consensus(&dir.join("consensus.csv"), &data.scores)?;
    data.manifest.save(&dir.join("synth_manifest.json"))?;
    println!("{n} synthetic {side}x{side} images, trait '{SYNTHETIC_TRAIT}'");
    write_manifest(
        &dir,
        "synth",
        argv,
        common,
        json!({ "synth": cfg, "trait": SYNTHETIC_TRAIT }),
        &["images/", "consensus.csv", "synth_manifest.json"],
    )
}
