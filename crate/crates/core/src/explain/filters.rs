use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::occlusion::write_grid_csv;
use crate::dataset::FaceImage;
use crate::error::{Error, Result};
use crate::model::{check_side, LayerKind, TrainedModel};

/// Per-filter activation maps of one convolutional layer for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterGrid {
    pub layer: usize,
    /// Side of every response map.
    pub side: usize,
    /// `maps[k]` is filter `k`, row-major, unnormalized.
    pub maps: Vec<Vec<f64>>,
}

impl FilterGrid {
    pub fn filters(&self) -> usize {
        self.maps.len()
    }

    /// Writes `filter_NNN.csv` per filter and a contrast-normalized
    /// `filters.png` montage into `dir`. Returns the montage path.
    pub fn export(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (k, map) in self.maps.iter().enumerate() {
            write_grid_csv(&dir.join(format!("filter_{k:03}.csv")), self.side, map)?;
        }
        let path = dir.join("filters.png");
        self.montage().save_png(&path)?;
        Ok(path)
    }

    /// Tiles the maps on a square-ish grid, each min-max stretched to
    /// [0, 1] (constant maps render black) and enlarged to at least 32 px.
    pub fn montage(&self) -> FaceImage {
        let n = self.maps.len().max(1);
        let cols = (n as f64).sqrt().ceil() as usize;
        let rows = n.div_ceil(cols);
        let zoom = 32usize.div_ceil(self.side).max(1);
        let tile = self.side * zoom;
        let gap = 2;
        let width = cols * tile + (cols - 1) * gap;
        let height = rows * tile + (rows - 1) * gap;
        let mut out = FaceImage::new("filters", width, height, vec![1.0; width * height]).expect("valid montage size");
        for (k, map) in self.maps.iter().enumerate() {
            let (ox, oy) = ((k % cols) * (tile + gap), (k / cols) * (tile + gap));
            let norm = min_max(map);
            for y in 0..tile {
                for x in 0..tile {
                    out.set(ox + x, oy + y, norm[(y / zoom) * self.side + x / zoom]);
                }
            }
        }
        out
    }
}

/// Stretches to [0, 1]; a constant input maps to all zeros.
pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Activation maps of convolutional layer `layer` (default: the last one).
pub fn filter_responses(model: &TrainedModel, image: &FaceImage, layer: Option<usize>) -> Result<FilterGrid> {
    check_side(model.side(), image)?;
    let layers = model.network().layers();
    let convs: Vec<usize> = layers.iter().filter(|l| l.kind == LayerKind::Conv).map(|l| l.index).collect();
    let index = match layer {
        Some(i) => i,
        None => *convs.last().expect("every network has a convolution"),
    };
    if !convs.contains(&index) {
        return Err(Error::InvalidLayer { index, valid: convs });
    }
    let info = layers[index];
    let out = model.network().layer_output(&image.pixels, index);
    let hw = info.height * info.width;
    Ok(FilterGrid {
        layer: index,
        side: info.width,
        maps: out.chunks(hw).map(<[f64]>::to_vec).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchitectureConfig, Network, ScoreStats, Segment};

    fn model(seed: Option<u64>) -> TrainedModel {
        let arch = ArchitectureConfig {
            segments: vec![Segment::new(2, 4), Segment::new(1, 6)],
            fc_layers: 1,
            fc_width: 8,
            dropout: 0.0,
            hidden_activation: Default::default(),
        };
        let mut net = Network::build(&arch, 16).unwrap();
        if let Some(s) = seed {
            net.initialize(s);
        }
        TrainedModel::new("t", net, ScoreStats { mean: 0.5, std: 0.1 }, vec![], None).unwrap()
    }

    #[test]
    fn default_layer_is_last_conv_with_expected_shape() {
        let m = model(Some(1));
        let img = FaceImage::filled("x", 16, 0.7);
        let g = filter_responses(&m, &img, None).unwrap();
        // conv, conv, pool, conv, pool
        assert_eq!(g.layer, 3);
        assert_eq!((g.filters(), g.side), (6, 8));
        let first = filter_responses(&m, &img, Some(0)).unwrap();
        assert_eq!((first.filters(), first.side), (4, 16));
    }

    #[test]
    fn zero_model_responds_with_zeros() {
        let g = filter_responses(&model(None), &FaceImage::filled("x", 16, 0.9), None).unwrap();
        assert!(g.maps.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn non_conv_layer_lists_valid_indices() {
        let err = filter_responses(&model(Some(1)), &FaceImage::filled("x", 16, 0.5), Some(2)).unwrap_err();
        match err {
            Error::InvalidLayer { index, valid } => {
                assert_eq!(index, 2);
                assert_eq!(valid, vec![0, 1, 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn export_writes_montage_and_grids() {
        let g = filter_responses(&model(Some(2)), &FaceImage::filled("x", 16, 0.2), None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let png = g.export(dir.path()).unwrap();
        assert!(png.exists());
        assert!(dir.path().join("filter_005.csv").exists());
        let montage = FaceImage::load_png(&png).unwrap();
        assert_eq!((montage.width, montage.height), (3 * 32 + 2 * 2, 2 * 32 + 2));
    }

    #[test]
    fn min_max_handles_constants() {
        assert_eq!(min_max(&[2.0, 2.0]), vec![0.0, 0.0]);
        assert_eq!(min_max(&[1.0, 3.0, 2.0]), vec![0.0, 1.0, 0.5]);
    }
}
