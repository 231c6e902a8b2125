//! Binary scene container.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic[8] = "PDSCENE1"  version:u32  class_count:u32
//! pose: tx ty tz yaw (f32)
//! partial_count:u32  { x y z (f32)  label:u16  semantics: C x f32 }
//! gt_count:u32       { x y z (f32)  label:u16 }
//! origin_count:u32   { x y z (f32) }
//! ray_count:u32      { origin:u32  x y z (f32)  hit:u8 }
//! ```
//!
//! Ground-truth semantics are one-hot and stored as labels only.

use std::path::Path;

use crate::dataset::{Pose, RaySet, RecordedRay, SceneSample};
use crate::error::{Error, Result};
use crate::geom::SemanticCloud;

pub const SCENE_MAGIC: [u8; 8] = *b"PDSCENE1";
pub const SCENE_VERSION: u32 = 1;

fn q(v: f64) -> f64 {
    v as f32 as f64
}

fn q3(p: &[f64; 3]) -> [f64; 3] {
    p.map(q)
}

/// Rounds every stored quantity to 32-bit precision, so that writing and
/// reading back gives an identical value.
pub fn quantize(scene: &SceneSample) -> Result<SceneSample> {
    let partial = SemanticCloud::new(
        scene.partial.class_count(),
        scene.partial.positions().iter().map(q3).collect(),
        scene.partial.semantics().iter().map(|&s| q(s)).collect(),
    )?;
    let gt = SemanticCloud::from_labels(
        scene.gt.class_count(),
        scene.gt.positions().iter().map(q3).collect(),
        &scene.gt.labels(),
    )?;
    Ok(SceneSample {
        partial,
        gt,
        sensor_pose: Pose::new(q3(&scene.sensor_pose.translation), q(scene.sensor_pose.yaw)),
        rays: RaySet {
            origins: scene.rays.origins.iter().map(q3).collect(),
            rays: scene
                .rays
                .rays
                .iter()
                .map(|r| RecordedRay {
                    end: q3(&r.end),
                    ..*r
                })
                .collect(),
        },
    })
}

pub fn encode_scene(scene: &SceneSample) -> Result<Vec<u8>> {
    let c = scene.class_count();
    Error::check_len("partial class count", c, scene.partial.class_count())?;
    if c > u16::MAX as usize {
        return Err(Error::invalid(format!("{c} classes do not fit 16-bit ids")));
    }
    let mut out = Vec::new();
    out.extend_from_slice(&SCENE_MAGIC);
    put_u32(&mut out, SCENE_VERSION);
    put_u32(&mut out, c as u32);
    let pose = &scene.sensor_pose;
    put_f32s(&mut out, &[pose.translation[0], pose.translation[1], pose.translation[2], pose.yaw]);
    put_u32(&mut out, scene.partial.len() as u32);
    for (i, label) in scene.partial.labels().into_iter().enumerate() {
        put_f32s(&mut out, &scene.partial.positions()[i]);
        out.extend_from_slice(&(label as u16).to_le_bytes());
        put_f32s(&mut out, scene.partial.semantics_of(i));
    }
    put_u32(&mut out, scene.gt.len() as u32);
    for (p, label) in scene.gt.positions().iter().zip(scene.gt.labels()) {
        put_f32s(&mut out, p);
        out.extend_from_slice(&(label as u16).to_le_bytes());
    }
    put_u32(&mut out, scene.rays.origins.len() as u32);
    for o in &scene.rays.origins {
        put_f32s(&mut out, o);
    }
    put_u32(&mut out, scene.rays.rays.len() as u32);
    for r in &scene.rays.rays {
        put_u32(&mut out, r.origin);
        put_f32s(&mut out, &r.end);
        out.push(r.hit as u8);
    }
    Ok(out)
}

pub fn decode_scene(bytes: &[u8]) -> std::result::Result<SceneSample, String> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(8)? != SCENE_MAGIC {
        return Err("not a scene file (bad magic)".into());
    }
    let version = r.u32()?;
    if version != SCENE_VERSION {
        return Err(format!("unsupported scene version {version}, expected {SCENE_VERSION}"));
    }
    let c = r.u32()? as usize;
    if c == 0 {
        return Err("class count is zero".into());
    }
    let [tx, ty, tz, yaw] = [r.f32()?, r.f32()?, r.f32()?, r.f32()?];
    let n = r.u32()? as usize;
    let mut positions = Vec::with_capacity(n.min(1 << 20));
    let mut semantics = Vec::with_capacity(n.min(1 << 20) * c);
    for _ in 0..n {
        positions.push(r.point()?);
        r.u16()?;
        for _ in 0..c {
            semantics.push(r.f32()?);
        }
    }
    let partial = SemanticCloud::new(c, positions, semantics).map_err(|e| format!("partial cloud: {e}"))?;
    let n = r.u32()? as usize;
    let mut positions = Vec::with_capacity(n.min(1 << 20));
    let mut labels = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        positions.push(r.point()?);
        labels.push(r.u16()? as usize);
    }
    let gt = SemanticCloud::from_labels(c, positions, &labels).map_err(|e| format!("ground truth: {e}"))?;
    let n = r.u32()? as usize;
    let mut origins = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        origins.push(r.point()?);
    }
    let n = r.u32()? as usize;
    let mut rays = Vec::with_capacity(n.min(1 << 22));
    for k in 0..n {
        let origin = r.u32()?;
        if origin as usize >= origins.len() {
            return Err(format!("ray {k} refers to missing origin {origin}"));
        }
        let end = r.point()?;
        let hit = match r.take(1)?[0] {
            0 => false,
            1 => true,
            b => return Err(format!("ray {k}: bad hit flag {b}")),
        };
        rays.push(RecordedRay { origin, end, hit });
    }
    if r.at != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.at));
    }
    Ok(SceneSample {
        partial,
        gt,
        sensor_pose: Pose::new([tx, ty, tz], yaw),
        rays: RaySet { origins, rays },
    })
}

pub fn write_scene(scene: &SceneSample, path: &Path) -> Result<()> {
    let bytes = encode_scene(scene)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_scene(path: &Path) -> Result<SceneSample> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scene(&bytes).map_err(|m| Error::format(path, m))
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vs: &[f64]) {
    for &v in vs {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.at + n;
        if end > self.bytes.len() {
            return Err(format!("truncated at byte {}", self.at));
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u16(&mut self) -> std::result::Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> std::result::Result<f64, String> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    fn point(&mut self) -> std::result::Result<[f64; 3], String> {
        Ok([self.f32()?, self.f32()?, self.f32()?])
    }
}
