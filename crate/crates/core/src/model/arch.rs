//! Declarative description of a convolutional regressor.
//!
//! A network is a stack of segments, each made of 3x3 same-padded
//! convolutions followed by one 2x2 max pool, then `fc_layers` hidden
//! fully-connected layers of `fc_width` units, then one linear output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub convs: usize,
    pub filters: usize,
}

impl Segment {
    pub const fn new(convs: usize, filters: usize) -> Self {
        Self { convs, filters }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    /// Leaky ReLU with one learned slope per channel (conv) or unit (dense).
    ParametricRelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureConfig {
    pub segments: Vec<Segment>,
    pub fc_layers: usize,
    pub fc_width: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default)]
    pub hidden_activation: Activation,
}

pub const CONV_KERNEL: usize = 3;
pub const PRELU_INIT: f64 = 0.25;

impl ArchitectureConfig {
    /// Checks every structural invariant for inputs of `side x side`.
    pub fn validate(&self, side: usize) -> Result<()> {
        if side == 0 {
            return Err(Error::Config("image side must be positive".into()));
        }
        if self.segments.is_empty() {
            return Err(Error::Config("at least one convolutional segment is required".into()));
        }
        let mut current = side;
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.convs == 0 || seg.filters == 0 {
                return Err(Error::Config(format!(
                    "segment {i} needs at least one convolution and one filter (got {seg:?})"
                )));
            }
            if current < 2 {
                return Err(Error::Config(format!(
                    "segment {i} cannot pool a {current}x{current} map (side {side} supports at most {} segments)",
                    max_segments(side)
                )));
            }
            current /= 2;
        }
        if self.fc_layers == 0 || self.fc_width == 0 {
            return Err(Error::Config("fc_layers and fc_width must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Spatial side of the last feature map.
    pub fn final_side(&self, side: usize) -> usize {
        self.segments.iter().fold(side, |s, _| s / 2)
    }

    pub fn flat_features(&self, side: usize) -> usize {
        let f = self.final_side(side);
        f * f * self.segments.last().map_or(1, |s| s.filters)
    }

    /// Number of trainable scalars, including PReLU slopes.
    pub fn param_count(&self, side: usize) -> usize {
        let prelu = matches!(self.hidden_activation, Activation::ParametricRelu);
        let mut total = 0;
        let mut channels = 1;
        for seg in &self.segments {
            for _ in 0..seg.convs {
                total += channels * CONV_KERNEL * CONV_KERNEL * seg.filters + seg.filters;
                if prelu {
                    total += seg.filters;
                }
                channels = seg.filters;
            }
        }
        let mut width = self.flat_features(side);
        for _ in 0..self.fc_layers {
            total += width * self.fc_width + self.fc_width;
            if prelu {
                total += self.fc_width;
            }
            width = self.fc_width;
        }
        total + width + 1
    }

    /// Divides every filter count (minimum 1) and the FC width by `divisor`.
    pub fn reduced(&self, divisor: usize) -> Self {
        let d = divisor.max(1);
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| Segment::new(s.convs, (s.filters / d).max(1)))
                .collect(),
            fc_width: (self.fc_width / d).max(1),
            ..self.clone()
        }
    }

    /// Keeps only the first `n` segments.
    pub fn truncated(&self, n: usize) -> Self {
        Self {
            segments: self.segments.iter().take(n.max(1)).copied().collect(),
            ..self.clone()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("architecture serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

/// Largest segment count that `side` can pool.
pub fn max_segments(side: usize) -> usize {
    let mut n = 0;
    let mut s = side;
    while s >= 2 {
        s /= 2;
        n += 1;
    }
    n
}

/// A named architecture with the learning rate it was tuned for.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub architecture: ArchitectureConfig,
    pub learning_rate: f64,
}

pub const PRESET_NAMES: [&str; 9] = [
    "vgg16",
    "vgg19",
    "moon",
    "shallow",
    "basic6",
    "moon-trust",
    "moon-dom",
    "moon-age",
    "moon-iq",
];

fn segs(spec: &[(usize, usize)]) -> Vec<Segment> {
    spec.iter().map(|&(c, f)| Segment::new(c, f)).collect()
}

/// Looks up a shipped preset.
///
/// The four `moon-*` presets carry the per-trait tuned values. The VGG and
/// base MOON fully-connected widths are downsized reconstructions for
/// 128 px grayscale input.
pub fn preset(name: &str) -> Option<Preset> {
    let arch = |segments: &[(usize, usize)], fc_layers, fc_width, dropout, act| ArchitectureConfig {
        segments: segs(segments),
        fc_layers,
        fc_width,
        dropout,
        hidden_activation: act,
    };
    use Activation::*;
    let p = match name {
        "vgg16" => Preset {
            name: "vgg16",
            architecture: arch(&[(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)], 2, 1024, 0.5, Relu),
            learning_rate: 1e-4,
        },
        "vgg19" => Preset {
            name: "vgg19",
            architecture: arch(&[(2, 64), (2, 128), (4, 256), (4, 512), (4, 512)], 2, 1024, 0.5, Relu),
            learning_rate: 1e-4,
        },
        "moon" => Preset {
            name: "moon",
            architecture: arch(
                &[(2, 64), (2, 128), (2, 256), (3, 256), (3, 512), (3, 512)],
                2,
                1024,
                0.5,
                Relu,
            ),
            learning_rate: 1e-4,
        },
        "shallow" => Preset {
            name: "shallow",
            architecture: arch(&[(1, 32), (1, 64), (1, 128)], 2, 512, 0.5, ParametricRelu),
            learning_rate: 1e-4,
        },
        "basic6" => Preset {
            name: "basic6",
            architecture: arch(&[(1, 32), (1, 64), (1, 128), (1, 256)], 2, 256, 0.0, Relu),
            learning_rate: 1e-4,
        },
        "moon-trust" => Preset {
            name: "moon-trust",
            architecture: arch(
                &[(2, 64), (2, 64), (2, 128), (3, 256), (3, 256), (3, 256)],
                1,
                2079,
                0.55,
                Relu,
            ),
            learning_rate: 10f64.powf(-4.2),
        },
        "moon-dom" => Preset {
            name: "moon-dom",
            architecture: arch(&[(2, 32), (2, 64), (3, 256), (3, 512), (3, 512)], 3, 2227, 0.31, Relu),
            learning_rate: 10f64.powf(-4.4),
        },
        "moon-age" => Preset {
            name: "moon-age",
            architecture: arch(&[(2, 32), (2, 128), (3, 256), (3, 512), (3, 512)], 4, 2187, 0.45, Relu),
            learning_rate: 10f64.powf(-4.8),
        },
        "moon-iq" => Preset {
            name: "moon-iq",
            architecture: arch(&[(2, 64), (2, 32), (3, 256), (3, 256)], 3, 1244, 0.38, Relu),
            learning_rate: 10f64.powf(-4.6),
        },
        _ => return None,
    };
    Some(p)
}
