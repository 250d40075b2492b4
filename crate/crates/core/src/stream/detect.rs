use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{AlignConfig, EyeLandmarks, FaceImage};
use crate::error::{Error, Result};

/// Axis-aligned rectangle in frame pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl FaceBox {
    pub fn area(&self) -> f64 {
        self.width * self.height
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub face_box: FaceBox,
    pub landmarks: EyeLandmarks,
}

/// Finds faces in one frame. Implementations must be pure per frame and
/// report failure as an empty list.
pub trait FaceDetector: Sync {
    fn detect(&self, frame_index: usize, frame: &FaceImage) -> Vec<Detection>;
}

/// The largest box; equal areas go to the topmost, then leftmost.
pub fn select_face(detections: &[Detection]) -> Option<Detection> {
    detections.iter().copied().reduce(|best, d| {
        let key = |d: &Detection| (d.face_box.area(), -d.face_box.y, -d.face_box.x);
        let (a, b) = (key(&best), key(&d));
        if b.0 > a.0 || (b.0 == a.0 && (b.1 > a.1 || (b.1 == a.1 && b.2 > a.2))) {
            d
        } else {
            best
        }
    })
}

/// Treats every frame as an already aligned face: the box is the central
/// square and the eyes sit at their canonical positions.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullFrameDetector;

impl FaceDetector for FullFrameDetector {
    fn detect(&self, _: usize, frame: &FaceImage) -> Vec<Detection> {
        let side = frame.width.min(frame.height);
        if side == 0 {
            return Vec::new();
        }
        let ox = ((frame.width - side) / 2) as f64;
        let oy = ((frame.height - side) / 2) as f64;
        let c = AlignConfig::with_side(side).canonical();
        vec![Detection {
            face_box: FaceBox { x: ox, y: oy, width: side as f64, height: side as f64 },
            landmarks: EyeLandmarks { left: (c.left.0 + ox, c.left.1 + oy), right: (c.right.0 + ox, c.right.1 + oy) },
        }]
    }
}

/// Detections read from a JSON sidecar mapping a frame key to a list of
/// detections. The key is the frame's image id (its file stem), or failing
/// that its zero-based index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureDetector {
    pub frames: BTreeMap<String, Vec<Detection>>,
}

impl FixtureDetector {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("fixture serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

impl FaceDetector for FixtureDetector {
    fn detect(&self, frame_index: usize, frame: &FaceImage) -> Vec<Detection> {
        self.frames
            .get(&frame.image_id)
            .or_else(|| self.frames.get(&frame_index.to_string()))
            .cloned()
            .unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(x: f64, y: f64, w: f64) -> Detection {
        Detection {
            face_box: FaceBox { x, y, width: w, height: w },
            landmarks: EyeLandmarks { left: (x, y), right: (x + 1.0, y) },
        }
    }

    #[test]
    fn largest_then_top_left_wins() {
        assert_eq!(select_face(&[]), None);
        assert_eq!(select_face(&[det(0.0, 0.0, 4.0), det(9.0, 9.0, 6.0)]), Some(det(9.0, 9.0, 6.0)));
        assert_eq!(select_face(&[det(5.0, 2.0, 4.0), det(1.0, 2.0, 4.0), det(0.0, 3.0, 4.0)]), Some(det(1.0, 2.0, 4.0)));
    }

    #[test]
    fn fixture_round_trip_and_lookup() {
        let mut fx = FixtureDetector::default();
        fx.frames.insert("frame_7".into(), vec![det(1.0, 1.0, 5.0)]);
        fx.frames.insert("3".into(), vec![det(2.0, 2.0, 5.0)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("faces.json");
        fx.save(&p).unwrap();
        let back = FixtureDetector::load(&p).unwrap();
        assert_eq!(back, fx);
        let named = FaceImage::filled("frame_7", 8, 0.5);
        assert_eq!(back.detect(0, &named), vec![det(1.0, 1.0, 5.0)]);
        let other = FaceImage::filled("x", 8, 0.5);
        assert_eq!(back.detect(3, &other), vec![det(2.0, 2.0, 5.0)]);
        assert!(back.detect(4, &other).is_empty());
    }

    #[test]
    fn full_frame_uses_canonical_eyes() {
        let d = FullFrameDetector.detect(0, &FaceImage::filled("x", 64, 0.5));
        assert_eq!(d[0].landmarks, AlignConfig::with_side(64).canonical());
    }
}
