use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("rejected record (image {image_id}, rater {rater_id}): {reason}")]
    RejectedRecord {
        image_id: String,
        rater_id: String,
        reason: String,
    },

    #[error("duplicate judgements for (image, rater, trait): {}", format_duplicates(.0))]
    DuplicateRatings(Vec<(String, String, String)>),

    #[error("no data: {0}")]
    NoData(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("alignment failed for {image_id}: {reason}")]
    AlignmentFailed { image_id: String, reason: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected side {expected}, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },

    #[error("training refused: {0}")]
    TrainingRefused(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid layer index {index}; convolutional layers are {valid:?}")]
    InvalidLayer { index: usize, valid: Vec<usize> },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    /// Short machine-friendly category used by the command line error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RejectedRecord { .. } => "rejected_record",
            Error::DuplicateRatings(_) => "duplicate_ratings",
            Error::NoData(_) => "no_data",
            Error::InsufficientData(_) => "insufficient_data",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::AlignmentFailed { .. } => "alignment_failed",
            Error::Config(_) => "config",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::TrainingRefused(_) => "training_refused",
            Error::Checkpoint(_) => "checkpoint",
            Error::InvalidLayer { .. } => "invalid_layer",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

fn format_duplicates(dups: &[(String, String, String)]) -> String {
    dups.iter()
        .map(|(i, r, t)| format!("({i}, {r}, {t})"))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
