//! Point-cloud primitives: depth unprojection, summaries, clustering and mask arithmetic.

mod camera;
mod cloud;
mod dbscan;
pub(crate) mod grid;
mod mask;
mod summary;

use thiserror::Error;

pub use camera::{unproject, CameraIntrinsics, DepthImage};
pub use cloud::{Pixel, PointCloud};
pub use dbscan::{dbscan, Cluster};
pub use mask::{containment_ratio, crop_to_mask, mask_overlap, Mask2D, Region};
pub use summary::{canonical_sign, summarize, GeomSummary, EIGEN_TIE_TOLERANCE};

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("{0} mask is empty")]
    EmptyMask(&'static str),
    #[error("image {path}: {message}")]
    Image { path: String, message: String },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
}
