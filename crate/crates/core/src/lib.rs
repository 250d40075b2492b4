//! Crowd-consensus face perception models.
//!
//! Raw Likert judgements become per-image consensus scores
//! ([`ratings`]), images are aligned and split ([`dataset`]),
//! convolutional regressors are trained and evaluated ([`model`]) and
//! tuned ([`search`]), explained with occlusion maps ([`explain`]), and
//! applied frame by frame to image sequences ([`stream`]). The [`cli`]
//! module wires everything behind one command-line entry point.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod explain;
pub mod model;
pub mod ratings;
pub mod search;
pub mod seed;
pub mod stats;
pub mod stream;

pub use error::{Error, Result};
