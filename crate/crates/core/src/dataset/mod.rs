//! Scene data: synthetic worlds and simulated LiDAR, KITTI ingestion, the
//! segmentation stand-in, and file formats.

pub mod colormap;
pub mod kitti;
pub mod ply;
pub mod scene_file;
pub mod segment;
pub mod synth;
pub mod world;

use crate::geom::SemanticCloud;

pub use colormap::ColorMap;
pub use kitti::{kitti_learning_map, read_kitti_scan, KittiScan};
pub use ply::{export_ply, read_ply, write_ply};
pub use scene_file::{read_scene, write_scene};
pub use segment::oracle_segment;
pub use synth::{generate_scene, SynthConfig};
pub use world::{aggregate_gt, raycast_scan, Primitive, ScanPattern, SyntheticWorld};

/// Sensor pose: translation plus rotation about the vertical axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: [f64; 3],
    pub yaw: f64,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        translation: [0.0; 3],
        yaw: 0.0,
    };

    pub fn new(translation: [f64; 3], yaw: f64) -> Self {
        Pose { translation, yaw }
    }

    pub fn rotate(&self, v: &[f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1], v[2]]
    }

    pub fn apply(&self, p: &[f64; 3]) -> [f64; 3] {
        let r = self.rotate(p);
        [
            r[0] + self.translation[0],
            r[1] + self.translation[1],
            r[2] + self.translation[2],
        ]
    }
}

/// One recorded sensor ray, from `origins[origin]` to `end`. `hit` is false
/// when the ray ran out of range without returning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordedRay {
    pub origin: u32,
    pub end: [f64; 3],
    pub hit: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RaySet {
    pub origins: Vec<[f64; 3]>,
    pub rays: Vec<RecordedRay>,
}

impl RaySet {
    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn origin_of(&self, ray: &RecordedRay) -> [f64; 3] {
        self.origins[ray.origin as usize]
    }
}

/// A training or evaluation pair: the segmented partial scan, the dense
/// aggregated ground truth, and the rays that observed the ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub partial: SemanticCloud,
    pub gt: SemanticCloud,
    pub sensor_pose: Pose,
    pub rays: RaySet,
}

impl SceneSample {
    pub fn class_count(&self) -> usize {
        self.gt.class_count()
    }
}
