//! Crowd Likert judgements: normalization, per-image consensus, dataset
//! statistics and split-half reliability.
//!
//! File formats (UTF-8, header row required):
//!
//! * ratings: `image_id,rater_id,trait,raw_score` as CSV, or one JSON object
//!   per line with the same keys when the file ends in `.jsonl`/`.ndjson`.
//! * consensus: `image_id,trait,mean_norm,std_norm,n_ratings`, same two
//!   encodings.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{seed, stats};

pub const LIKERT_MIN: i64 = 1;
pub const LIKERT_MAX: i64 = 7;

/// One rater's raw judgement of one image for one trait.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub image_id: String,
    pub rater_id: String,
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub raw_score: i64,
}

/// Per-image consensus: the regression target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusScore {
    pub image_id: String,
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub mean_norm: f64,
    pub std_norm: f64,
    pub n_ratings: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitStats {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub mean_of_ratings: f64,
    pub std_of_ratings: f64,
    pub mean_std_of_ratings: f64,
    pub mean_num_of_ratings: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    #[serde(rename = "trait")]
    pub trait_name: String,
    pub r_squared: f64,
    pub n_images: usize,
    pub n_raters_half_a: usize,
    pub n_raters_half_b: usize,
    pub seed: u64,
}

impl RatingRecord {
    pub fn new(image_id: &str, rater_id: &str, trait_name: &str, raw_score: i64) -> Self {
        Self {
            image_id: image_id.to_string(),
            rater_id: rater_id.to_string(),
            trait_name: trait_name.to_string(),
            raw_score,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(LIKERT_MIN..=LIKERT_MAX).contains(&self.raw_score) {
            return Err(Error::RejectedRecord {
                image_id: self.image_id.clone(),
                rater_id: self.rater_id.clone(),
                reason: format!(
                    "raw_score {} outside [{LIKERT_MIN}, {LIKERT_MAX}]",
                    self.raw_score
                ),
            });
        }
        Ok(())
    }

    pub fn normalized(&self) -> Result<f64> {
        self.validate()?;
        Ok(likert_unit(self.raw_score))
    }
}

fn likert_unit(raw: i64) -> f64 {
    (raw - LIKERT_MIN) as f64 / (LIKERT_MAX - LIKERT_MIN) as f64
}

/// Maps a 1..=7 Likert value onto [0, 1] with `(raw - 1) / 6`.
pub fn normalize_likert(raw_score: i64) -> Result<f64> {
    if !(LIKERT_MIN..=LIKERT_MAX).contains(&raw_score) {
        return Err(Error::RejectedRecord {
            image_id: String::new(),
            rater_id: String::new(),
            reason: format!("raw_score {raw_score} outside [{LIKERT_MIN}, {LIKERT_MAX}]"),
        });
    }
    Ok(likert_unit(raw_score))
}

/// Integer accumulator over `raw - 1` so that means and variances are exact
/// rationals, independent of record order.
#[derive(Default, Clone, Copy)]
struct Tally {
    n: u64,
    sum: u64,
    sum_sq: u64,
}

impl Tally {
    fn push(&mut self, raw: i64) {
        let x = (raw - LIKERT_MIN) as u64;
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean_norm(&self) -> f64 {
        let span = (LIKERT_MAX - LIKERT_MIN) as u64;
        self.sum as f64 / (span * self.n) as f64
    }

    fn std_norm(&self) -> f64 {
        let span = (LIKERT_MAX - LIKERT_MIN) as u128;
        let n = self.n as u128;
        let num = n * self.sum_sq as u128 - (self.sum as u128) * (self.sum as u128);
        let den = span * span * n * n;
        (num as f64 / den as f64).sqrt()
    }
}

/// Groups records by `(image_id, trait)` and averages normalized ratings.
///
/// Output is sorted by `(image_id, trait)`. Duplicate `(image, rater, trait)`
/// triples are rejected, listing every offender.
pub fn aggregate(records: &[RatingRecord]) -> Result<Vec<ConsensusScore>> {
    let mut seen: BTreeSet<(&str, &str, &str)> = BTreeSet::new();
    let mut duplicates: BTreeSet<(String, String, String)> = BTreeSet::new();
    let mut groups: BTreeMap<(&str, &str), Tally> = BTreeMap::new();
    for r in records {
        r.validate()?;
        let key = (r.image_id.as_str(), r.rater_id.as_str(), r.trait_name.as_str());
        if !seen.insert(key) {
            duplicates.insert((
                r.image_id.clone(),
                r.rater_id.clone(),
                r.trait_name.clone(),
            ));
            continue;
        }
        groups
            .entry((r.image_id.as_str(), r.trait_name.as_str()))
            .or_default()
            .push(r.raw_score);
    }
    if !duplicates.is_empty() {
        return Err(Error::DuplicateRatings(duplicates.into_iter().collect()));
    }
    Ok(groups
        .into_iter()
        .map(|((image_id, trait_name), t)| ConsensusScore {
            image_id: image_id.to_string(),
            trait_name: trait_name.to_string(),
            mean_norm: t.mean_norm(),
            std_norm: t.std_norm(),
            n_ratings: t.n as usize,
        })
        .collect())
}

/// Dataset-level statistics for one trait. Callers pass the training
/// partition only when reproducing training-set tables.
pub fn trait_stats(scores: &[ConsensusScore], trait_name: &str) -> Result<TraitStats> {
    let selected: Vec<&ConsensusScore> = scores
        .iter()
        .filter(|s| s.trait_name == trait_name)
        .collect();
    if selected.is_empty() {
        return Err(Error::NoData(format!("no consensus scores for trait {trait_name:?}")));
    }
    let means: Vec<f64> = selected.iter().map(|s| s.mean_norm).collect();
    let stds: Vec<f64> = selected.iter().map(|s| s.std_norm).collect();
    let counts: Vec<f64> = selected.iter().map(|s| s.n_ratings as f64).collect();
    Ok(TraitStats {
        trait_name: trait_name.to_string(),
        mean_of_ratings: stats::mean(&means),
        std_of_ratings: stats::population_std(&means),
        mean_std_of_ratings: stats::mean(&stds),
        mean_num_of_ratings: stats::mean(&counts),
    })
}

/// Splits the raters of `trait_name` into two random disjoint halves and
/// reports the squared correlation of per-image means between them, over
/// images rated by both halves.
pub fn split_half_reliability(
    records: &[RatingRecord],
    trait_name: &str,
    seed_value: u64,
) -> Result<ReliabilityReport> {
    let relevant: Vec<&RatingRecord> = records
        .iter()
        .filter(|r| r.trait_name == trait_name)
        .collect();
    for r in &relevant {
        r.validate()?;
    }
    let mut raters: Vec<&str> = relevant
        .iter()
        .map(|r| r.rater_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if raters.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "trait {trait_name:?} has {} distinct raters; need at least 2",
            raters.len()
        )));
    }
    let mut rng = seed::rng(seed::derive(seed_value, "split-half"));
    raters.shuffle(&mut rng);
    let half = raters.len() / 2;
    let half_a: BTreeSet<&str> = raters[..half].iter().copied().collect();

    let mut per_image: BTreeMap<&str, (Tally, Tally)> = BTreeMap::new();
    for r in &relevant {
        let entry = per_image.entry(r.image_id.as_str()).or_default();
        if half_a.contains(r.rater_id.as_str()) {
            entry.0.push(r.raw_score);
        } else {
            entry.1.push(r.raw_score);
        }
    }
    let (a, b): (Vec<f64>, Vec<f64>) = per_image
        .values()
        .filter(|(ta, tb)| ta.n > 0 && tb.n > 0)
        .map(|(ta, tb)| (ta.mean_norm(), tb.mean_norm()))
        .unzip();
    if a.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "only {} images rated by both rater halves; need at least 2",
            a.len()
        )));
    }
    let r_squared = stats::r_squared(&a, &b)?;
    Ok(ReliabilityReport {
        trait_name: trait_name.to_string(),
        r_squared,
        n_images: a.len(),
        n_raters_half_a: half,
        n_raters_half_b: raters.len() - half,
        seed: seed_value,
    })
}

fn is_json_lines(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    )
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    if is_json_lines(path) {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut out = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row = serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
            out.push(row);
        }
        Ok(out)
    } else {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        reader
            .deserialize()
            .map(|row| row.map_err(|e| Error::parse(path, e)))
            .collect()
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    if is_json_lines(path) {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for row in rows {
            let line = serde_json::to_string(row).map_err(|e| Error::parse(path, e))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    } else {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        for row in rows {
            writer.serialize(row).map_err(|e| Error::parse(path, e))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads and validates a ratings file. Out-of-range scores are rejected.
pub fn read_ratings(path: &Path) -> Result<Vec<RatingRecord>> {
    let rows: Vec<RatingRecord> = read_rows(path)?;
    for r in &rows {
        r.validate()?;
    }
    Ok(rows)
}

pub fn write_ratings(path: &Path, records: &[RatingRecord]) -> Result<()> {
    write_rows(path, records)
}

pub fn read_consensus(path: &Path) -> Result<Vec<ConsensusScore>> {
    let rows: Vec<ConsensusScore> = read_rows(path)?;
    for s in &rows {
        if !(0.0..=1.0).contains(&s.mean_norm) || s.n_ratings == 0 {
            return Err(Error::parse(
                path,
                format!("invalid consensus row for image {}", s.image_id),
            ));
        }
    }
    Ok(rows)
}

pub fn write_consensus(path: &Path, scores: &[ConsensusScore]) -> Result<()> {
    write_rows(path, scores)
}

/// Reads either a raw ratings file or a consensus file, deciding by the
/// header, and returns consensus scores.
pub fn read_scores_any(path: &Path) -> Result<Vec<ConsensusScore>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .map_err(|e| Error::io(path, e))?;
    if first.contains("raw_score") {
        aggregate(&read_ratings(path)?)
    } else {
        read_consensus(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(img: &str, rater: &str, raw: i64) -> RatingRecord {
        RatingRecord::new(img, rater, "trust", raw)
    }

    #[test]
    fn likert_endpoints() {
        assert_eq!(normalize_likert(1).unwrap(), 0.0);
        assert_eq!(normalize_likert(4).unwrap(), 0.5);
        assert_eq!(normalize_likert(7).unwrap(), 1.0);
        assert!(normalize_likert(0).is_err());
        assert!(normalize_likert(8).is_err());
    }

    #[test]
    fn rejected_record_names_ids() {
        let err = aggregate(&[rec("img9", "r4", 9)]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("img9") && msg.contains("r4"), "{msg}");
    }

    #[test]
    fn aggregate_three_ratings() {
        let out = aggregate(&[rec("a", "1", 3), rec("a", "2", 5), rec("a", "3", 4)]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].mean_norm, 0.5);
        assert_eq!(out[0].n_ratings, 3);
    }

    #[test]
    fn single_rating_has_zero_std() {
        let out = aggregate(&[rec("a", "1", 7)]).unwrap();
        assert_eq!(out[0].mean_norm, 1.0);
        assert_eq!(out[0].std_norm, 0.0);
    }

    #[test]
    fn empty_input_is_empty_output() {
        assert!(aggregate(&[]).unwrap().is_empty());
    }

    #[test]
    fn duplicates_are_listed() {
        let err = aggregate(&[rec("a", "1", 3), rec("a", "1", 4), rec("b", "2", 4)]).unwrap_err();
        match err {
            Error::DuplicateRatings(d) => {
                assert_eq!(d, vec![("a".into(), "1".into(), "trust".into())])
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn trait_stats_three_images() {
        let scores: Vec<ConsensusScore> = [0.2, 0.5, 0.8]
            .iter()
            .enumerate()
            .map(|(i, &m)| ConsensusScore {
                image_id: i.to_string(),
                trait_name: "trust".into(),
                mean_norm: m,
                std_norm: 0.0,
                n_ratings: 1,
            })
            .collect();
        let s = trait_stats(&scores, "trust").unwrap();
        assert!((s.mean_of_ratings - 0.5).abs() < 1e-12);
        assert!((s.std_of_ratings - 0.2449).abs() < 1e-4);
        assert!(matches!(trait_stats(&scores, "iq"), Err(Error::NoData(_))));
    }

    #[test]
    fn identical_consensus_has_zero_spread() {
        let scores: Vec<ConsensusScore> = (0..5)
            .map(|i| ConsensusScore {
                image_id: i.to_string(),
                trait_name: "age".into(),
                mean_norm: 0.375,
                std_norm: 0.1,
                n_ratings: 4,
            })
            .collect();
        let s = trait_stats(&scores, "age").unwrap();
        assert_eq!(s.std_of_ratings, 0.0);
        assert_eq!(s.mean_of_ratings, 0.375);
    }

    #[test]
    fn identical_halves_are_perfectly_reliable() {
        // every rater gives the same score to an image, so both halves agree
        let mut records = Vec::new();
        for (i, raw) in [2, 5, 7, 1, 4].iter().enumerate() {
            for r in 0..6 {
                records.push(rec(&format!("img{i}"), &format!("r{r}"), *raw));
            }
        }
        let rep = split_half_reliability(&records, "trust", 11).unwrap();
        assert_eq!(rep.r_squared, 1.0);
        assert_eq!(rep.n_images, 5);
        assert_eq!(rep.n_raters_half_a + rep.n_raters_half_b, 6);
    }

    #[test]
    fn reliability_needs_two_shared_images() {
        let records = vec![rec("a", "1", 3), rec("a", "2", 4)];
        assert!(matches!(
            split_half_reliability(&records, "trust", 0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn csv_and_jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![rec("a", "1", 3), rec("b", "2", 6)];
        for name in ["r.csv", "r.jsonl"] {
            let p = dir.path().join(name);
            write_ratings(&p, &records).unwrap();
            assert_eq!(read_ratings(&p).unwrap(), records);
            let scores = read_scores_any(&p).unwrap();
            assert_eq!(scores.len(), 2);
        }
    }

    proptest! {
        #[test]
        fn normalize_is_order_preserving(a in 1i64..=7, b in 1i64..=7) {
            let (na, nb) = (normalize_likert(a).unwrap(), normalize_likert(b).unwrap());
            prop_assert_eq!(a < b, na < nb);
        }

        #[test]
        fn aggregate_is_permutation_invariant(
            raw in proptest::collection::vec((0usize..6, 1i64..=7), 1..60),
            seed_value in any::<u64>(),
        ) {
            let records: Vec<RatingRecord> = raw
                .iter()
                .enumerate()
                .map(|(k, (img, s))| rec(&format!("i{img}"), &format!("r{k}"), *s))
                .collect();
            let mut shuffled = records.clone();
            shuffled.shuffle(&mut seed::rng(seed_value));
            let a = aggregate(&records).unwrap();
            let b = aggregate(&shuffled).unwrap();
            prop_assert_eq!(&a, &b);
            for s in &a {
                prop_assert!((0.0..=1.0).contains(&s.mean_norm));
            }
        }

        #[test]
        fn reliability_is_reproducible(seed_value in any::<u64>()) {
            let mut records = Vec::new();
            for i in 0..8 {
                for r in 0..6 {
                    records.push(rec(&format!("i{i}"), &format!("r{r}"), 1 + ((i * 3 + r * 5) % 7) as i64));
                }
            }
            let a = split_half_reliability(&records, "trust", seed_value);
            let b = split_half_reliability(&records, "trust", seed_value);
            match (a, b) {
                (Ok(a), Ok(b)) => {
                    prop_assert_eq!(a.r_squared.to_bits(), b.r_squared.to_bits());
                    prop_assert!((0.0..=1.0).contains(&a.r_squared));
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "non-reproducible outcome"),
            }
        }
    }
}
