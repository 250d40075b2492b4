use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::arch::max_segments;
use crate::model::{Activation, ArchitectureConfig, Segment, TrainingConfig};

/// Closed interval `[lo, hi]`; `lo == hi` pins the dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub lo: T,
    pub hi: T,
}

impl<T: PartialOrd + Copy> Range<T> {
    pub fn new(lo: T, hi: T) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: T) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: T) -> bool {
        self.lo <= v && v <= self.hi
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    /// Input side the sampled networks must fit.
    pub image_side: usize,
    /// Range of `log10(learning_rate)`.
    pub log10_learning_rate: Range<f64>,
    pub dropout: Range<f64>,
    pub filter_choices: Vec<usize>,
    pub segments: Range<usize>,
    pub convs_per_segment: Range<usize>,
    pub fc_layers: Range<usize>,
    /// Sampled log-uniformly and rounded.
    pub fc_width: Range<usize>,
    pub augmentation: Range<f64>,
    /// Minibatch sampling temperature; `None` keeps plain shuffling.
    pub sampling_temperature: Option<Range<f64>>,
    pub hidden_activation: Activation,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            image_side: 128,
            log10_learning_rate: Range::new(-5.5, -3.5),
            dropout: Range::new(0.2, 0.7),
            filter_choices: vec![32, 64, 128, 256, 512],
            segments: Range::new(3, 6),
            convs_per_segment: Range::new(1, 3),
            fc_layers: Range::new(1, 4),
            fc_width: Range::new(256, 2560),
            augmentation: Range::new(0.0, 1.0),
            sampling_temperature: Some(Range::new(1.0, 10.0)),
            hidden_activation: Activation::Relu,
        }
    }
}

/// One point of the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub learning_rate: f64,
    pub dropout: f64,
    pub segments: Vec<Segment>,
    pub fc_layers: usize,
    pub fc_width: usize,
    pub augmentation: f64,
    pub sampling_temperature: Option<f64>,
    pub hidden_activation: Activation,
}

impl TrialParams {
    pub fn architecture(&self) -> ArchitectureConfig {
        ArchitectureConfig {
            segments: self.segments.clone(),
            fc_layers: self.fc_layers,
            fc_width: self.fc_width,
            dropout: self.dropout,
            hidden_activation: self.hidden_activation,
        }
    }

    /// `base` with the searched training fields replaced.
    pub fn training_config(&self, base: &TrainingConfig) -> TrainingConfig {
        let mut cfg = base.clone();
        cfg.learning_rate = self.learning_rate;
        cfg.augmentation.amount = self.augmentation;
        cfg.sampling_temperature = self.sampling_temperature;
        cfg
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        fn ordered<T: PartialOrd + std::fmt::Debug>(name: &str, r: &Range<T>) -> Result<()> {
            if r.lo > r.hi {
                return Err(Error::Config(format!("{name}: lower bound {:?} exceeds upper bound {:?}", r.lo, r.hi)));
            }
            Ok(())
        }
        ordered("log10_learning_rate", &self.log10_learning_rate)?;
        ordered("dropout", &self.dropout)?;
        ordered("segments", &self.segments)?;
        ordered("convs_per_segment", &self.convs_per_segment)?;
        ordered("fc_layers", &self.fc_layers)?;
        ordered("fc_width", &self.fc_width)?;
        ordered("augmentation", &self.augmentation)?;
        if !self.log10_learning_rate.lo.is_finite() || !self.log10_learning_rate.hi.is_finite() {
            return Err(Error::Config("log10_learning_rate must be finite".into()));
        }
        if self.dropout.lo < 0.0 || self.dropout.hi >= 1.0 {
            return Err(Error::Config("dropout must lie in [0, 1)".into()));
        }
        if self.augmentation.lo < 0.0 || self.augmentation.hi > 1.0 {
            return Err(Error::Config("augmentation must lie in [0, 1]".into()));
        }
        if let Some(t) = &self.sampling_temperature {
            ordered("sampling_temperature", t)?;
            if t.lo <= 0.0 || !t.hi.is_finite() {
                return Err(Error::Config("sampling_temperature must be positive and finite".into()));
            }
        }
        if self.filter_choices.is_empty() || self.filter_choices.contains(&0) {
            return Err(Error::Config("filter_choices must be non-empty and positive".into()));
        }
        if self.segments.lo == 0 || self.convs_per_segment.lo == 0 || self.fc_layers.lo == 0 || self.fc_width.lo == 0 {
            return Err(Error::Config("segment, conv and dense counts must be at least 1".into()));
        }
        let cap = max_segments(self.image_side);
        if self.segments.lo > cap {
            return Err(Error::Config(format!(
                "side {} supports at most {cap} segments but the range starts at {}",
                self.image_side, self.segments.lo
            )));
        }
        Ok(())
    }

    /// Largest segment count that is both in range and buildable.
    pub fn max_feasible_segments(&self) -> usize {
        self.segments.hi.min(max_segments(self.image_side))
    }

    pub fn contains(&self, p: &TrialParams) -> bool {
        let lr = p.learning_rate.log10();
        let lr_ok = self.log10_learning_rate.contains(lr)
            || (lr - self.log10_learning_rate.lo).abs() < 1e-12
            || (lr - self.log10_learning_rate.hi).abs() < 1e-12;
        let temp_ok = match (&self.sampling_temperature, p.sampling_temperature) {
            (None, None) => true,
            (Some(r), Some(t)) => r.contains(t),
            _ => false,
        };
        lr_ok
            && temp_ok
            && self.dropout.contains(p.dropout)
            && self.augmentation.contains(p.augmentation)
            && self.segments.contains(p.segments.len())
            && p.segments.len() <= max_segments(self.image_side)
            && p.segments
                .iter()
                .all(|s| self.convs_per_segment.contains(s.convs) && self.filter_choices.contains(&s.filters))
            && self.fc_layers.contains(p.fc_layers)
            && self.fc_width.contains(p.fc_width)
            && p.hidden_activation == self.hidden_activation
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let space: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        space.validate()?;
        Ok(space)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("search space serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::parse(path, e))
    }
}

pub(crate) fn uniform<R: Rng + ?Sized>(rng: &mut R, r: Range<f64>) -> f64 {
    let u: f64 = rng.random();
    r.lo + (r.hi - r.lo) * u
}

pub(crate) fn uniform_int<R: Rng + ?Sized>(rng: &mut R, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

pub(crate) fn log_uniform_int<R: Rng + ?Sized>(rng: &mut R, r: Range<usize>) -> usize {
    let (lo, hi) = ((r.lo as f64).ln(), (r.hi as f64).ln());
    let u: f64 = rng.random();
    ((lo + (hi - lo) * u).exp().round() as usize).clamp(r.lo, r.hi)
}

/// Draws one point. Every slot up to the feasible segment cap is drawn even
/// when unused so the number of draws does not depend on earlier values.
pub fn sample<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> TrialParams {
    let learning_rate = 10f64.powf(uniform(rng, space.log10_learning_rate));
    let dropout = uniform(rng, space.dropout);
    let n_segments = uniform_int(rng, space.segments.lo, space.max_feasible_segments());
    let slots: Vec<Segment> = (0..space.max_feasible_segments())
        .map(|_| {
            let convs = uniform_int(rng, space.convs_per_segment.lo, space.convs_per_segment.hi);
            let filters = space.filter_choices[rng.random_range(0..space.filter_choices.len())];
            Segment::new(convs, filters)
        })
        .collect();
    let fc_layers = uniform_int(rng, space.fc_layers.lo, space.fc_layers.hi);
    let fc_width = log_uniform_int(rng, space.fc_width);
    let augmentation = uniform(rng, space.augmentation);
    let sampling_temperature = space.sampling_temperature.map(|r| uniform(rng, r));
    TrialParams {
        learning_rate,
        dropout,
        segments: slots[..n_segments].to_vec(),
        fc_layers,
        fc_width,
        augmentation,
        sampling_temperature,
        hidden_activation: space.hidden_activation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn small_space() -> SearchSpace {
        SearchSpace { image_side: 32, ..SearchSpace::default() }
    }

    #[test]
    fn degenerate_space_yields_its_point() {
        let space = SearchSpace {
            image_side: 64,
            log10_learning_rate: Range::point(-4.0),
            dropout: Range::point(0.3),
            filter_choices: vec![64],
            segments: Range::point(4),
            convs_per_segment: Range::point(2),
            fc_layers: Range::point(2),
            fc_width: Range::point(512),
            augmentation: Range::point(0.25),
            sampling_temperature: Some(Range::point(2.0)),
            hidden_activation: Activation::Relu,
        };
        space.validate().unwrap();
        for s in 0..5 {
            let p = sample(&space, &mut seed::rng(s));
            assert_eq!(p.learning_rate, 10f64.powf(-4.0));
            assert_eq!(p.dropout, 0.3);
            assert_eq!(p.segments, vec![Segment::new(2, 64); 4]);
            assert_eq!((p.fc_layers, p.fc_width), (2, 512));
            assert_eq!(p.augmentation, 0.25);
            assert_eq!(p.sampling_temperature, Some(2.0));
        }
    }

    #[test]
    fn samples_stay_in_bounds_and_cover_choices() {
        let space = small_space();
        let mut rng = seed::rng(11);
        let mut filters_seen = std::collections::BTreeSet::new();
        let mut counts_seen = std::collections::BTreeSet::new();
        for _ in 0..1000 {
            let p = sample(&space, &mut rng);
            assert!(space.contains(&p), "{p:?}");
            filters_seen.extend(p.segments.iter().map(|s| s.filters));
            counts_seen.insert(p.segments.len());
        }
        assert_eq!(filters_seen.into_iter().collect::<Vec<_>>(), space.filter_choices);
        assert_eq!(counts_seen.into_iter().collect::<Vec<_>>(), vec![3, 4, 5]);
    }

    #[test]
    fn every_sample_builds() {
        for side in [16, 32, 64, 128] {
            let space = SearchSpace { image_side: side, segments: Range::new(1, 8), ..SearchSpace::default() };
            let mut rng = seed::rng(side as u64);
            for _ in 0..2500 {
                sample(&space, &mut rng).architecture().validate(side).unwrap();
            }
        }
    }

    #[test]
    fn learning_rate_is_log_uniform() {
        let space = small_space();
        let mut rng = seed::rng(5);
        let bins = 10;
        let n = 5000;
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let x = sample(&space, &mut rng).learning_rate.log10();
            let t = (x - space.log10_learning_rate.lo) / (space.log10_learning_rate.hi - space.log10_learning_rate.lo);
            counts[((t * bins as f64) as usize).min(bins - 1)] += 1;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99th percentile of chi-square with 9 degrees of freedom
        assert!(chi2 < 21.666, "chi2 {chi2} counts {counts:?}");
    }

    #[test]
    fn rejects_malformed_spaces() {
        let mut s = small_space();
        s.dropout = Range::new(0.6, 0.2);
        assert!(s.validate().is_err());
        let mut s = small_space();
        s.segments = Range::new(7, 8);
        assert!(s.validate().is_err());
        let mut s = small_space();
        s.filter_choices.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn toml_round_trip() {
        let s = small_space();
        assert_eq!(SearchSpace::from_toml_str(&s.to_toml_string()).unwrap(), s);
        let partial = SearchSpace::from_toml_str("image_side = 64\nfilter_choices = [8, 16]\n").unwrap();
        assert_eq!(partial.filter_choices, vec![8, 16]);
        assert_eq!(partial.dropout, SearchSpace::default().dropout);
    }
}
