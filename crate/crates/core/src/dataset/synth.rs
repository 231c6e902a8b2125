//! Randomized street scenes: a road along the x axis flanked by raised
//! sidewalks, parked cars, building blocks, poles and shrubs. The key sensor
//! sits at the origin; ground-truth poses are spread along the road.

use rand::Rng;

use crate::dataset::colormap::{
    SYNTH_BUILDING, SYNTH_CAR, SYNTH_CLASSES, SYNTH_POLE, SYNTH_ROAD, SYNTH_SIDEWALK, SYNTH_VEGETATION,
};
use crate::dataset::scene_file::quantize;
use crate::dataset::world::{aggregate_gt_with_rays, raycast_scan, GtSettings, Primitive, ScanPattern, SyntheticWorld};
use crate::dataset::{oracle_segment, Pose, SceneSample};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const GROUND_Z: f64 = -1.73;
pub const SIDEWALK_Z: f64 = -1.58;
const SIDEWALK_INNER: f64 = 4.0;
const SIDEWALK_OUTER: f64 = 7.0;
const STREET_HALF_LENGTH: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub cars: usize,
    pub buildings: usize,
    pub poles: usize,
    pub shrubs: usize,
    /// Objects are placed with `|x| <= layout_half_length`.
    pub layout_half_length: f64,
    pub partial_pattern: ScanPattern,
    pub gt: GtSettings,
    /// x positions of the extra ground-truth poses; the key pose at the
    /// origin is always first.
    pub gt_pose_offsets: Vec<f64>,
    pub flip_rate: f64,
    pub confidence: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            cars: 3,
            buildings: 4,
            poles: 3,
            shrubs: 3,
            layout_half_length: 9.0,
            partial_pattern: ScanPattern::uniform(64, 12, -25.0, 5.0),
            gt: GtSettings {
                pattern: ScanPattern::uniform(360, 40, -30.0, 15.0),
                radius: 10.0,
                spacing: 0.5,
            },
            gt_pose_offsets: vec![-5.0, 5.0, -2.5, 2.5],
            flip_rate: 0.05,
            confidence: 0.9,
        }
    }
}

impl SynthConfig {
    pub fn class_count(&self) -> usize {
        SYNTH_CLASSES.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.partial_pattern.ray_count() == 0 || self.gt.pattern.ray_count() == 0 {
            return Err(Error::invalid("scan patterns need positive ray counts"));
        }
        if !(self.gt.radius > 0.0) || !(self.gt.spacing > 0.0) {
            return Err(Error::invalid("ground truth radius and spacing must be positive"));
        }
        if !(self.layout_half_length > 0.0) {
            return Err(Error::invalid("layout length must be positive"));
        }
        Ok(())
    }

    pub fn gt_poses(&self) -> Vec<Pose> {
        std::iter::once(Pose::IDENTITY)
            .chain(self.gt_pose_offsets.iter().map(|&x| Pose::new([x, 0.0, 0.0], 0.0)))
            .collect()
    }
}

fn overlaps(a: &[f64; 4], b: &[f64; 4], margin: f64) -> bool {
    a[0] < b[1] + margin && b[0] < a[1] + margin && a[2] < b[3] + margin && b[2] < a[3] + margin
}

/// Draws footprints until one clears every placed footprint; gives up after
/// a fixed number of attempts.
fn place(footprints: &mut Vec<[f64; 4]>, draw: &mut impl FnMut() -> [f64; 4]) -> Option<[f64; 4]> {
    for _ in 0..50 {
        let f = draw();
        if footprints.iter().all(|g| !overlaps(&f, g, 0.5)) {
            footprints.push(f);
            return Some(f);
        }
    }
    None
}

fn sidewalk_spot(rng: &mut impl Rng, r: f64, l: f64) -> [f64; 2] {
    let x = rng.random_range(-l..l);
    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let room = (SIDEWALK_OUTER - SIDEWALK_INNER - 2.0 * r).max(0.0);
    [x, side * (SIDEWALK_INNER + r + rng.random::<f64>() * room)]
}

/// Random street layout. Footprints of cars and buildings do not overlap.
pub fn random_world(cfg: &SynthConfig, rng: &mut impl Rng) -> Result<SyntheticWorld> {
    let l = cfg.layout_half_length;
    let mut prims = vec![Primitive::Plane {
        z: GROUND_Z,
        bounds: None,
        class: SYNTH_ROAD,
    }];
    for side in [-1.0, 1.0] {
        let (y0, y1) = if side > 0.0 {
            (SIDEWALK_INNER, SIDEWALK_OUTER)
        } else {
            (-SIDEWALK_OUTER, -SIDEWALK_INNER)
        };
        prims.push(Primitive::Plane {
            z: SIDEWALK_Z,
            bounds: Some([-STREET_HALF_LENGTH, STREET_HALF_LENGTH, y0, y1]),
            class: SYNTH_SIDEWALK,
        });
    }
    let mut footprints: Vec<[f64; 4]> = Vec::new();
    for _ in 0..cfg.cars {
        let mut draw = || {
            let len = rng.random_range(3.8..4.6);
            let wid = rng.random_range(1.6..1.9);
            let x = rng.random_range(-l..l);
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let y = side * rng.random_range(1.9..2.6);
            [x - len / 2.0, x + len / 2.0, y - wid / 2.0, y + wid / 2.0]
        };
        if let Some(f) = place(&mut footprints, &mut draw) {
            let h = rng.random_range(1.3..1.7);
            prims.push(Primitive::Box {
                min: [f[0], f[2], GROUND_Z],
                max: [f[1], f[3], GROUND_Z + h],
                class: SYNTH_CAR,
            });
        }
    }
    for _ in 0..cfg.buildings {
        let mut draw = || {
            let len = rng.random_range(4.0..9.0);
            let depth = rng.random_range(3.0..6.0);
            let x = rng.random_range(-l..l);
            let y0 = SIDEWALK_OUTER + rng.random_range(0.0..1.5);
            if rng.random::<bool>() {
                [x - len / 2.0, x + len / 2.0, y0, y0 + depth]
            } else {
                [x - len / 2.0, x + len / 2.0, -y0 - depth, -y0]
            }
        };
        if let Some(f) = place(&mut footprints, &mut draw) {
            let h = rng.random_range(3.0..8.0);
            prims.push(Primitive::Box {
                min: [f[0], f[2], GROUND_Z],
                max: [f[1], f[3], GROUND_Z + h],
                class: SYNTH_BUILDING,
            });
        }
    }
    for _ in 0..cfg.poles {
        let r = rng.random_range(0.12..0.2);
        let center = sidewalk_spot(rng, r, l);
        let h = rng.random_range(3.0..5.0);
        prims.push(Primitive::Cylinder {
            center,
            radius: r,
            z_min: SIDEWALK_Z,
            z_max: SIDEWALK_Z + h,
            class: SYNTH_POLE,
        });
    }
    for _ in 0..cfg.shrubs {
        let r = rng.random_range(0.5..1.1);
        let center = sidewalk_spot(rng, r, l);
        let h = rng.random_range(0.8..2.0);
        prims.push(Primitive::Cylinder {
            center,
            radius: r,
            z_min: SIDEWALK_Z,
            z_max: SIDEWALK_Z + h,
            class: SYNTH_VEGETATION,
        });
    }
    SyntheticWorld::new(SYNTH_CLASSES.len(), prims)
}

/// Scene `index` of the stream: random world, segmented key scan, and
/// ground truth aggregated over the configured poses. Values are rounded to
/// 32-bit precision so the scene survives a file round trip unchanged.
pub fn generate_scene(cfg: &SynthConfig, stream: &RngStream, index: u64) -> Result<SceneSample> {
    cfg.validate()?;
    let world = random_world(cfg, &mut stream.derive("world").rng(index, 0))?;
    let scan = raycast_scan(&world, &Pose::IDENTITY, &cfg.partial_pattern, cfg.gt.radius)?;
    let partial = oracle_segment(
        scan.positions(),
        &scan.labels(),
        world.class_count(),
        cfg.flip_rate,
        cfg.confidence,
        &mut stream.derive("segment").rng(index, 0),
    )?;
    let (gt, rays) = aggregate_gt_with_rays(&world, &cfg.gt_poses(), &cfg.gt)?;
    quantize(&SceneSample {
        partial,
        gt,
        sensor_pose: Pose::IDENTITY,
        rays,
    })
}
