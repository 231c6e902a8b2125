//! Analytic worlds and a first-hit LiDAR simulator.

use std::collections::HashSet;

use crate::dataset::{Pose, RaySet, RecordedRay};
use crate::error::{Error, Result};
use crate::geom::{squared_distance, SemanticCloud};

/// Rays starting closer than this to a surface do not report it.
const MIN_HIT_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// Horizontal plane at height `z`, optionally bounded to
    /// `[x_min, x_max] x [y_min, y_max]`.
    Plane {
        z: f64,
        bounds: Option<[f64; 4]>,
        class: usize,
    },
    /// Axis-aligned box.
    Box {
        min: [f64; 3],
        max: [f64; 3],
        class: usize,
    },
    /// Vertical capped cylinder.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        z_min: f64,
        z_max: f64,
        class: usize,
    },
}

impl Primitive {
    pub fn class(&self) -> usize {
        match *self {
            Primitive::Plane { class, .. }
            | Primitive::Box { class, .. }
            | Primitive::Cylinder { class, .. } => class,
        }
    }

    /// Smallest ray parameter `t > MIN_HIT_DISTANCE` at which `o + t d`
    /// touches the surface.
    pub fn intersect(&self, o: &[f64; 3], d: &[f64; 3]) -> Option<f64> {
        match *self {
            Primitive::Plane { z, bounds, .. } => {
                if d[2] == 0.0 {
                    return None;
                }
                let t = (z - o[2]) / d[2];
                if !(t > MIN_HIT_DISTANCE) {
                    return None;
                }
                if let Some([x0, x1, y0, y1]) = bounds {
                    let x = o[0] + t * d[0];
                    let y = o[1] + t * d[1];
                    if !(x0 <= x && x <= x1 && y0 <= y && y <= y1) {
                        return None;
                    }
                }
                Some(t)
            }
            Primitive::Box { min, max, .. } => {
                let mut near = f64::NEG_INFINITY;
                let mut far = f64::INFINITY;
                for a in 0..3 {
                    if d[a] == 0.0 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (min[a] - o[a]) / d[a];
                    let t2 = (max[a] - o[a]) / d[a];
                    near = near.max(t1.min(t2));
                    far = far.min(t1.max(t2));
                }
                if far < near {
                    return None;
                }
                if near > MIN_HIT_DISTANCE {
                    Some(near)
                } else if far > MIN_HIT_DISTANCE {
                    Some(far)
                } else {
                    None
                }
            }
            Primitive::Cylinder {
                center,
                radius,
                z_min,
                z_max,
                ..
            } => {
                let mut best: Option<f64> = None;
                let mut offer = |t: f64| {
                    if t > MIN_HIT_DISTANCE && best.is_none_or(|b| t < b) {
                        best = Some(t);
                    }
                };
                let (px, py) = (o[0] - center[0], o[1] - center[1]);
                let a = d[0] * d[0] + d[1] * d[1];
                if a > 0.0 {
                    let b = px * d[0] + py * d[1];
                    let c = px * px + py * py - radius * radius;
                    let disc = b * b - a * c;
                    if disc >= 0.0 {
                        let root = disc.sqrt();
                        for t in [(-b - root) / a, (-b + root) / a] {
                            let z = o[2] + t * d[2];
                            if z_min <= z && z <= z_max {
                                offer(t);
                            }
                        }
                    }
                }
                if d[2] != 0.0 {
                    for zc in [z_min, z_max] {
                        let t = (zc - o[2]) / d[2];
                        let x = px + t * d[0];
                        let y = py + t * d[1];
                        if x * x + y * y <= radius * radius {
                            offer(t);
                        }
                    }
                }
                best
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SyntheticWorld {
    class_count: usize,
    primitives: Vec<Primitive>,
}

impl SyntheticWorld {
    pub fn new(class_count: usize, primitives: Vec<Primitive>) -> Result<Self> {
        if class_count == 0 {
            return Err(Error::invalid("world needs at least one class"));
        }
        if let Some(p) = primitives.iter().find(|p| p.class() >= class_count) {
            return Err(Error::invalid(format!(
                "primitive class {} exceeds class count {class_count}",
                p.class()
            )));
        }
        Ok(SyntheticWorld {
            class_count,
            primitives,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn primitives(&self) -> &[Primitive] {
        &self.primitives
    }

    /// First hit along the ray: `(t, class)`. Ties go to the earlier primitive.
    pub fn first_hit(&self, o: &[f64; 3], d: &[f64; 3]) -> Option<(f64, usize)> {
        let mut best: Option<(f64, usize)> = None;
        for p in &self.primitives {
            if let Some(t) = p.intersect(o, d) {
                if best.is_none_or(|(b, _)| t < b) {
                    best = Some((t, p.class()));
                }
            }
        }
        best
    }
}

/// Spinning-sensor ray layout in the sensor frame: `azimuth_count` evenly
/// spaced headings times a list of elevation angles (radians).
#[derive(Debug, Clone, PartialEq)]
pub struct ScanPattern {
    pub azimuth_count: usize,
    pub elevations: Vec<f64>,
}

impl ScanPattern {
    /// `rings` elevations evenly spaced over `[min_deg, max_deg]`.
    pub fn uniform(azimuth_count: usize, rings: usize, min_deg: f64, max_deg: f64) -> Self {
        let elevations = (0..rings)
            .map(|k| {
                let f = if rings == 1 {
                    0.5
                } else {
                    k as f64 / (rings - 1) as f64
                };
                (min_deg + f * (max_deg - min_deg)).to_radians()
            })
            .collect();
        ScanPattern {
            azimuth_count,
            elevations,
        }
    }

    pub fn ray_count(&self) -> usize {
        self.azimuth_count * self.elevations.len()
    }

    /// Unit direction of ray `(ring, azimuth)` in the sensor frame.
    pub fn direction(&self, ring: usize, azimuth: usize) -> [f64; 3] {
        let phi = std::f64::consts::TAU * azimuth as f64 / self.azimuth_count as f64;
        let theta = self.elevations[ring];
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        [ct * cp, ct * sp, st]
    }
}

/// Ray outcome in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayReturn {
    pub end: [f64; 3],
    pub class: Option<usize>,
}

/// Casts every ray of `pattern` from `pose`, in ring-major order. Missed rays
/// end at `max_range` with no class.
pub fn cast_rays(world: &SyntheticWorld, pose: &Pose, pattern: &ScanPattern, max_range: f64) -> Vec<RayReturn> {
    let o = pose.translation;
    let mut out = Vec::with_capacity(pattern.ray_count());
    for ring in 0..pattern.elevations.len() {
        for az in 0..pattern.azimuth_count {
            let d = pose.rotate(&pattern.direction(ring, az));
            let (t, class) = match world.first_hit(&o, &d) {
                Some((t, c)) if t <= max_range => (t, Some(c)),
                _ => (max_range, None),
            };
            out.push(RayReturn {
                end: [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]],
                class,
            });
        }
    }
    out
}

/// Hit points of one scan with one-hot semantics of the surface hit.
pub fn raycast_scan(
    world: &SyntheticWorld,
    pose: &Pose,
    pattern: &ScanPattern,
    max_range: f64,
) -> Result<SemanticCloud> {
    if pattern.azimuth_count == 0 || pattern.elevations.is_empty() {
        return Err(Error::invalid("scan pattern needs positive ray counts"));
    }
    if !(max_range > 0.0) {
        return Err(Error::invalid(format!("max range must be positive, got {max_range}")));
    }
    let (positions, labels): (Vec<_>, Vec<_>) = cast_rays(world, pose, pattern, max_range)
        .into_iter()
        .filter_map(|r| r.class.map(|c| (r.end, c)))
        .unzip();
    SemanticCloud::from_labels(world.class_count(), positions, &labels)
}

/// How ground truth is assembled from several dense scans.
#[derive(Debug, Clone, PartialEq)]
pub struct GtSettings {
    pub pattern: ScanPattern,
    /// Points farther than this from the key pose are dropped.
    pub radius: f64,
    /// Side of the grid used to thin the union; the first point (in pose,
    /// then ray order) of every cell is kept.
    pub spacing: f64,
}

/// Dense multi-pose scan union around `poses[0]`.
pub fn aggregate_gt(world: &SyntheticWorld, poses: &[Pose], settings: &GtSettings) -> Result<SemanticCloud> {
    aggregate_gt_with_rays(world, poses, settings).map(|(c, _)| c)
}

/// [`aggregate_gt`] plus every ray cast while building it.
pub fn aggregate_gt_with_rays(
    world: &SyntheticWorld,
    poses: &[Pose],
    settings: &GtSettings,
) -> Result<(SemanticCloud, RaySet)> {
    let key = poses
        .first()
        .ok_or_else(|| Error::invalid("ground truth needs at least one pose"))?
        .translation;
    if !(settings.radius > 0.0) || !(settings.spacing > 0.0) {
        return Err(Error::invalid("ground truth radius and spacing must be positive"));
    }
    let mut positions = Vec::new();
    let mut labels = Vec::new();
    let mut seen = HashSet::new();
    let mut rays = RaySet::default();
    let r2 = settings.radius * settings.radius;
    for (k, pose) in poses.iter().enumerate() {
        let reach = settings.radius + squared_distance(&pose.translation, &key).sqrt();
        rays.origins.push(pose.translation);
        for ret in cast_rays(world, pose, &settings.pattern, reach) {
            rays.rays.push(RecordedRay {
                origin: k as u32,
                end: ret.end,
                hit: ret.class.is_some(),
            });
            let Some(class) = ret.class else { continue };
            if squared_distance(&ret.end, &key) > r2 {
                continue;
            }
            let cell = ret.end.map(|v| (v / settings.spacing).floor() as i64);
            if seen.insert(cell) {
                positions.push(ret.end);
                labels.push(class);
            }
        }
    }
    let cloud = SemanticCloud::from_labels(world.class_count(), positions, &labels)?;
    Ok((cloud, rays))
}
