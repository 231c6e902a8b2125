//! Semantic point clouds and the spatial structures built over them.
//!
//! A semantic point pairs a position in meters with a probability vector over
//! `C` classes. Everything downstream (diffusion, the denoiser, evaluation)
//! consumes [`SemanticCloud`], which stores points in flat arrays.

mod cloud;
mod index;
mod simplex;
mod voxel;

pub use cloud::{argmax_class, SemanticCloud, SemanticPoint, SIMPLEX_TOLERANCE};
pub use index::SpatialIndex;
pub use simplex::{project_to_simplex, SimplexMode};
pub use voxel::{voxelize, GridSpec, VoxelGrid};

/// Default number of semantic classes for KITTI-style label sets.
pub const DEFAULT_CLASS_COUNT: usize = 19;

#[inline]
pub fn squared_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}
