//! Tree-structured Parzen proposals.
//!
//! Each searched quantity is one dimension, either continuous on a closed
//! interval or a finite choice. Completed trials are ranked by validation R²
//! and split into a good and a bad set; per dimension, candidates drawn from
//! the good-set density are scored by the ratio of good to bad density and
//! the best one is kept.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::function::erf::erf;

use super::space::{SearchSpace, TrialParams};
use crate::model::Segment;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Domain {
    Continuous { lo: f64, hi: f64 },
    Choice { n: usize },
}

/// Tuning knobs for the proposal step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TpeSettings {
    /// Fraction of ranked trials forming the good set.
    pub gamma: f64,
    pub candidates: usize,
}

impl Default for TpeSettings {
    fn default() -> Self {
        Self { gamma: 0.25, candidates: 24 }
    }
}

/// Number of random trials before modelling starts.
pub fn warmup_trials(budget: usize) -> usize {
    10.max(budget / 5)
}

const FIXED_DIMS: usize = 6;

pub(crate) fn domains(space: &SearchSpace) -> Vec<Domain> {
    let mut d = vec![
        Domain::Continuous { lo: space.log10_learning_rate.lo, hi: space.log10_learning_rate.hi },
        Domain::Continuous { lo: space.dropout.lo, hi: space.dropout.hi },
        Domain::Choice { n: space.max_feasible_segments() - space.segments.lo + 1 },
        Domain::Choice { n: space.fc_layers.hi - space.fc_layers.lo + 1 },
        Domain::Continuous { lo: (space.fc_width.lo as f64).ln(), hi: (space.fc_width.hi as f64).ln() },
        Domain::Continuous { lo: space.augmentation.lo, hi: space.augmentation.hi },
    ];
    if let Some(t) = space.sampling_temperature {
        d.push(Domain::Continuous { lo: t.lo, hi: t.hi });
    }
    for _ in 0..space.max_feasible_segments() {
        d.push(Domain::Choice { n: space.convs_per_segment.hi - space.convs_per_segment.lo + 1 });
        d.push(Domain::Choice { n: space.filter_choices.len() });
    }
    d
}

fn slot_base(space: &SearchSpace) -> usize {
    FIXED_DIMS + usize::from(space.sampling_temperature.is_some())
}

/// Coordinates of `p`; slots beyond its segment count are inactive.
pub(crate) fn encode(space: &SearchSpace, p: &TrialParams) -> Vec<Option<f64>> {
    let mut v = vec![
        Some(p.learning_rate.log10()),
        Some(p.dropout),
        Some((p.segments.len() - space.segments.lo) as f64),
        Some((p.fc_layers - space.fc_layers.lo) as f64),
        Some((p.fc_width as f64).ln()),
        Some(p.augmentation),
    ];
    if space.sampling_temperature.is_some() {
        v.push(p.sampling_temperature);
    }
    for j in 0..space.max_feasible_segments() {
        match p.segments.get(j) {
            Some(s) => {
                v.push(Some((s.convs - space.convs_per_segment.lo) as f64));
                v.push(space.filter_choices.iter().position(|&f| f == s.filters).map(|i| i as f64));
            }
            None => v.extend([None, None]),
        }
    }
    v
}

pub(crate) fn decode(space: &SearchSpace, v: &[f64]) -> TrialParams {
    let n_segments = space.segments.lo + v[2] as usize;
    let base = slot_base(space);
    let segments = (0..n_segments)
        .map(|j| {
            Segment::new(
                space.convs_per_segment.lo + v[base + 2 * j] as usize,
                space.filter_choices[v[base + 2 * j + 1] as usize],
            )
        })
        .collect();
    TrialParams {
        learning_rate: 10f64.powf(v[0]),
        dropout: v[1],
        segments,
        fc_layers: space.fc_layers.lo + v[3] as usize,
        fc_width: (v[4].exp().round() as usize).clamp(space.fc_width.lo, space.fc_width.hi),
        augmentation: v[5],
        sampling_temperature: space.sampling_temperature.map(|_| v[FIXED_DIMS]),
        hidden_activation: space.hidden_activation,
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Truncated Gaussian mixture with one kernel per observation plus a wide
/// prior kernel at the interval centre.
struct Parzen {
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    lo: f64,
    hi: f64,
}

impl Parzen {
    fn fit(obs: &[f64], lo: f64, hi: f64) -> Self {
        let width = hi - lo;
        let mut mus: Vec<f64> = obs.to_vec();
        mus.push(0.5 * (lo + hi));
        mus.sort_by(f64::total_cmp);
        let min_sigma = width / (mus.len() as f64).min(100.0);
        let sigmas = (0..mus.len())
            .map(|i| {
                let left = if i > 0 { mus[i] - mus[i - 1] } else { mus[i] - lo };
                let right = if i + 1 < mus.len() { mus[i + 1] - mus[i] } else { hi - mus[i] };
                left.max(right).clamp(min_sigma, width)
            })
            .collect();
        Self { mus, sigmas, lo, hi }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let k = rng.random_range(0..self.mus.len());
        let dist = Normal::new(self.mus[k], self.sigmas[k]).expect("positive sigma");
        for _ in 0..64 {
            let x = dist.sample(rng);
            if (self.lo..=self.hi).contains(&x) {
                return x;
            }
        }
        self.mus[k].clamp(self.lo, self.hi)
    }

    fn log_density(&self, x: f64) -> f64 {
        let mut total = 0.0;
        for (&mu, &sigma) in self.mus.iter().zip(&self.sigmas) {
            let mass = normal_cdf((self.hi - mu) / sigma) - normal_cdf((self.lo - mu) / sigma);
            let z = (x - mu) / sigma;
            total += (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * sigma * mass.max(1e-300));
        }
        (total / self.mus.len() as f64).max(1e-300).ln()
    }
}

fn choice_probs(obs: &[f64], n: usize) -> Vec<f64> {
    let mut counts = vec![1.0; n];
    for &o in obs {
        counts[o as usize] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| c / total).collect()
}

fn draw_choice<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Proposes the next point from `(params, val_r2)` observations. A score
/// of negative infinity marks a failed trial, which can only join the bad
/// set. Returns `None` when no trial has succeeded.
pub(crate) fn propose<R: Rng + ?Sized>(
    space: &SearchSpace,
    history: &[(TrialParams, f64)],
    settings: &TpeSettings,
    rng: &mut R,
) -> Option<TrialParams> {
    let succeeded = history.iter().filter(|h| h.1.is_finite()).count();
    if succeeded == 0 {
        return None;
    }
    let mut ranked: Vec<usize> = (0..history.len()).collect();
    ranked.sort_by(|&a, &b| history[b].1.total_cmp(&history[a].1).then(a.cmp(&b)));
    let n_good = ((settings.gamma * history.len() as f64).ceil() as usize).clamp(1, succeeded);
    let mut is_good = vec![false; history.len()];
    for &i in &ranked[..n_good] {
        is_good[i] = true;
    }
    let encoded: Vec<Vec<Option<f64>>> = history.iter().map(|(p, _)| encode(space, p)).collect();

    let doms = domains(space);
    let mut point = Vec::with_capacity(doms.len());
    for (d, dom) in doms.iter().enumerate() {
        let (mut good, mut bad) = (Vec::new(), Vec::new());
        for (e, &g) in encoded.iter().zip(&is_good) {
            if let Some(x) = e[d] {
                if g { good.push(x) } else { bad.push(x) }
            }
        }
        let value = match *dom {
            Domain::Continuous { lo, hi } if lo == hi => lo,
            Domain::Continuous { lo, hi } => {
                let l = Parzen::fit(&good, lo, hi);
                let g = Parzen::fit(&bad, lo, hi);
                best_of(settings.candidates, rng, |r| l.sample(r), |x| l.log_density(x) - g.log_density(x))
            }
            Domain::Choice { n } => {
                let l = choice_probs(&good, n);
                let g = choice_probs(&bad, n);
                best_of(
                    settings.candidates,
                    rng,
                    |r| draw_choice(&l, r) as f64,
                    |x| l[x as usize].ln() - g[x as usize].ln(),
                )
            }
        };
        point.push(value);
    }
    Some(decode(space, &point))
}

fn best_of<R: Rng + ?Sized>(
    n: usize,
    rng: &mut R,
    mut draw: impl FnMut(&mut R) -> f64,
    score: impl Fn(f64) -> f64,
) -> f64 {
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    for _ in 0..n.max(1) {
        let x = draw(rng);
        let s = score(x);
        if s > best.0 || best.1.is_nan() {
            best = (s, x);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::space::{sample, Range};
    use crate::seed;

    #[test]
    fn encode_decode_round_trip() {
        let space = SearchSpace { image_side: 64, ..SearchSpace::default() };
        let mut rng = seed::rng(3);
        for _ in 0..200 {
            let p = sample(&space, &mut rng);
            let v: Vec<f64> = encode(&space, &p).into_iter().map(|x| x.unwrap_or(0.0)).collect();
            let q = decode(&space, &v);
            assert_eq!(p.segments, q.segments);
            assert_eq!((p.fc_layers, p.fc_width), (q.fc_layers, q.fc_width));
            assert!((p.learning_rate - q.learning_rate).abs() < 1e-15);
        }
    }

    #[test]
    fn parzen_density_integrates_to_one() {
        let p = Parzen::fit(&[0.1, 0.15, 0.8], 0.0, 1.0);
        let n = 20000;
        let integral: f64 = (0..n).map(|i| p.log_density((i as f64 + 0.5) / n as f64).exp()).sum::<f64>() / n as f64;
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    }

    #[test]
    fn proposals_are_feasible_and_follow_good_trials() {
        let space = SearchSpace {
            image_side: 32,
            sampling_temperature: None,
            segments: Range::new(1, 5),
            ..SearchSpace::default()
        };
        let mut rng = seed::rng(9);
        // Objective rewards dropout near 0.25.
        let history: Vec<(TrialParams, f64)> = (0..40)
            .map(|_| {
                let p = sample(&space, &mut rng);
                let score = -(p.dropout - 0.25).abs();
                (p, score)
            })
            .collect();
        let mut near = 0;
        for _ in 0..100 {
            let p = propose(&space, &history, &TpeSettings::default(), &mut rng).unwrap();
            assert!(space.contains(&p));
            p.architecture().validate(space.image_side).unwrap();
            near += usize::from(p.dropout < 0.35);
        }
        // Uniform sampling would put 30% of proposals below 0.35.
        assert!(near > 60, "{near}");
    }
}
