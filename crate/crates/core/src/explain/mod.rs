//! What a model looks at: occlusion heatmaps, averaged overlays and
//! convolutional filter responses.

mod filters;
mod occlusion;
mod render;

pub use filters::{filter_responses, min_max, FilterGrid};
pub use occlusion::{average_heatmap, box_offsets, occlusion_map, Heatmap, OcclusionConfig};
pub use render::{colormap, overlay_rgb, render_overlay, OVERLAY_ALPHA};
