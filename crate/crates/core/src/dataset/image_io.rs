use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EyeLandmarks, FaceImage};
use crate::error::{Error, Result};

/// Loads every `<image_id>.png` in a directory, sorted by id.
pub fn load_image_dir(dir: &Path) -> Result<Vec<FaceImage>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(|p| FaceImage::load_png(p)).collect()
}

#[derive(Serialize, Deserialize)]
struct LandmarkRow {
    image_id: String,
    left_x: f64,
    left_y: f64,
    right_x: f64,
    right_y: f64,
}

/// Landmarks CSV: `image_id,left_x,left_y,right_x,right_y`.
pub fn read_landmarks(path: &Path) -> Result<BTreeMap<String, EyeLandmarks>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let mut out = BTreeMap::new();
    for row in reader.deserialize::<LandmarkRow>() {
        let row = row.map_err(|e| Error::parse(path, e))?;
        out.insert(
            row.image_id,
            EyeLandmarks {
                left: (row.left_x, row.left_y),
                right: (row.right_x, row.right_y),
            },
        );
    }
    Ok(out)
}

pub fn write_landmarks(path: &Path, landmarks: &BTreeMap<String, EyeLandmarks>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for (id, l) in landmarks {
        writer
            .serialize(LandmarkRow {
                image_id: id.clone(),
                left_x: l.left.0,
                left_y: l.left.1,
                right_x: l.right.0,
                right_y: l.right.1,
            })
            .map_err(|e| Error::parse(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}
