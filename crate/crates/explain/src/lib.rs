//! Explanations for trained classifiers: 3D Grad-CAM heatmaps, overlays on
//! image slices, and ranking of atlas regions by mean heatmap intensity.

use std::path::PathBuf;

pub mod gradcam;
pub mod overlay;
pub mod regions;

pub use gradcam::{class_activation, grad_cam_3d, normalize_min_max, upsample_trilinear, Cam, Heatmap, DEFAULT_LAYER};
pub use overlay::{overlay_slices, render_slice, slice_pgm, three_views, Axis, Rgb};
pub use regions::{aggregate_reports, region_rank, render_table, RegionReport, RegionRow};

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error(transparent)]
    Net(#[from] jmap_net::NetError),
    #[error("layer {layer} is not a cached conv block (the model has {blocks})")]
    LayerNotCached { layer: usize, blocks: usize },
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{axis:?} slice {index} out of bounds (extent {extent})")]
    SliceOutOfBounds { axis: Axis, index: usize, extent: usize },
    #[error("inconsistent atlases: {0}")]
    AtlasMismatch(String),
    #[error("no reports to aggregate")]
    NoReports,
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
