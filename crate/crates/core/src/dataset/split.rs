use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const MIN_SPLIT_SIZE: usize = 10;

/// Disjoint train/validation/test id sets.
///
/// `|train| = round(0.8 N)` (half rounds up); the remainder is halved and,
/// when odd, validation takes the extra id. Each list is sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (8 * n + 5) / 10;
    let rest = n - train;
    let val = rest.div_ceil(2);
    (train, val, rest - val)
}

pub fn make_split(image_ids: &[String], seed_value: u64) -> Result<DataSplit> {
    let unique: BTreeSet<&String> = image_ids.iter().collect();
    if unique.len() != image_ids.len() {
        return Err(Error::Config("image ids must be unique to split".into()));
    }
    let n = image_ids.len();
    if n < MIN_SPLIT_SIZE {
        return Err(Error::InsufficientData(format!(
            "{n} images cannot form three non-empty partitions; need at least {MIN_SPLIT_SIZE}"
        )));
    }
    let mut ids: Vec<String> = unique.into_iter().cloned().collect();
    ids.shuffle(&mut seed::rng(seed::derive(seed_value, "split")));
    let (train, val, _) = split_sizes(n);
    let mut test_ids = ids.split_off(train + val);
    let mut val_ids = ids.split_off(train);
    let mut train_ids = ids;
    train_ids.sort();
    val_ids.sort();
    test_ids.sort();
    Ok(DataSplit {
        seed: seed_value,
        train_ids,
        val_ids,
        test_ids,
    })
}

impl DataSplit {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::parse(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn len(&self) -> usize {
        self.train_ids.len() + self.val_ids.len() + self.test_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
