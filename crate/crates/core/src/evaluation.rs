//! Voxel-level completion metrics.
//!
//! Both clouds are clipped to an [`EvalVolume`], voxelized with majority-vote
//! labels, and compared cell by cell over the cells a mask marks as known.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::dataset::RaySet;
use crate::error::{Error, Result};
use crate::geom::{voxelize, GridSpec, SemanticCloud, SpatialIndex, VoxelGrid};

pub const DEFAULT_VOXEL_SIZE: f64 = 0.2;

/// Axis-aligned evaluation box whose extents are whole numbers of voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalVolume {
    min: [f64; 3],
    max: [f64; 3],
    voxel_size: f64,
    spec: GridSpec,
}

impl EvalVolume {
    pub fn new(min: [f64; 3], max: [f64; 3], voxel_size: f64) -> Result<Self> {
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::invalid(format!("voxel size must be positive, got {voxel_size}")));
        }
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let cells = (max[a] - min[a]) / voxel_size;
            let rounded = cells.round();
            if !(rounded >= 1.0) || (cells - rounded).abs() > 1e-9 * rounded.max(1.0) {
                return Err(Error::invalid(format!(
                    "extent {} along axis {a} is not a positive multiple of voxel size {voxel_size}",
                    max[a] - min[a]
                )));
            }
            dims[a] = rounded as usize;
        }
        Ok(EvalVolume {
            min,
            max,
            voxel_size,
            spec: GridSpec::new(min, voxel_size, dims)?,
        })
    }

    /// `x in [-51.2, 51.2]`, `y in [-25.6, 25.6]`, `z in [-3.2, 3.2]`, 0.2 m voxels.
    pub fn kitti_default() -> Self {
        Self::new([-51.2, -25.6, -3.2], [51.2, 25.6, 3.2], DEFAULT_VOXEL_SIZE).expect("valid default volume")
    }

    pub fn min(&self) -> [f64; 3] {
        self.min
    }

    pub fn max(&self) -> [f64; 3] {
        self.max
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn grid(&self) -> &GridSpec {
        &self.spec
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        self.spec.cell_of(p).is_some()
    }

    pub fn clip(&self, cloud: &SemanticCloud) -> SemanticCloud {
        cloud.filter(|_, p| self.contains(p))
    }
}

/// Visits every cell crossed by the segment `a -> b`, in order, by stepping
/// from cell boundary to cell boundary.
pub fn traverse_segment(spec: &GridSpec, a: &[f64; 3], b: &[f64; 3], mut visit: impl FnMut(usize)) {
    let lo = spec.origin;
    let hi = spec.extent_max();
    let d = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..3 {
        if d[k] == 0.0 {
            if a[k] < lo[k] || a[k] >= hi[k] {
                return;
            }
            continue;
        }
        let u = (lo[k] - a[k]) / d[k];
        let v = (hi[k] - a[k]) / d[k];
        t0 = t0.max(u.min(v));
        t1 = t1.min(u.max(v));
    }
    if t0 > t1 {
        return;
    }
    let vs = spec.voxel_size;
    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut next = [f64::INFINITY; 3];
    let mut delta = [f64::INFINITY; 3];
    for k in 0..3 {
        let p = a[k] + t0 * d[k];
        let c = ((p - lo[k]) / vs).floor() as i64;
        cell[k] = c.clamp(0, spec.dims[k] as i64 - 1);
        if d[k] > 0.0 {
            step[k] = 1;
            next[k] = (lo[k] + (cell[k] + 1) as f64 * vs - a[k]) / d[k];
            delta[k] = vs / d[k];
        } else if d[k] < 0.0 {
            step[k] = -1;
            next[k] = (lo[k] + cell[k] as f64 * vs - a[k]) / d[k];
            delta[k] = -vs / d[k];
        }
    }
    loop {
        visit(spec.linear([cell[0] as usize, cell[1] as usize, cell[2] as usize]));
        let k = if next[0] <= next[1] && next[0] <= next[2] {
            0
        } else if next[1] <= next[2] {
            1
        } else {
            2
        };
        if next[k] > t1 {
            return;
        }
        cell[k] += step[k];
        if cell[k] < 0 || cell[k] >= spec.dims[k] as i64 {
            return;
        }
        next[k] += delta[k];
    }
}

/// Grid whose known flags mark every cell crossed by at least one ray,
/// up to and including the cell of its end point.
pub fn build_unknown_mask(rays: &RaySet, volume: &EvalVolume) -> VoxelGrid {
    let mut grid = VoxelGrid::new_unknown(*volume.grid());
    for ray in &rays.rays {
        let o = rays.origin_of(ray);
        traverse_segment(volume.grid(), &o, &ray.end, |i| grid.set_known(i, true));
    }
    grid
}

/// Copy of `mask` that additionally hides every cell holding a point of `cloud`.
pub fn exclude_occupied(mask: &VoxelGrid, cloud: &SemanticCloud) -> VoxelGrid {
    let mut out = mask.clone();
    for p in cloud.positions() {
        if let Some(idx) = mask.spec().cell_of(p) {
            out.set_known(mask.spec().linear(idx), false);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl Counts {
    /// `tp / (tp + fp + fn)`, `None` when all three are zero.
    pub fn iou(&self) -> Option<f64> {
        let denom = self.tp + self.fp + self.fn_;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }

    pub fn add(&self, other: &Counts) -> Counts {
        Counts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub iou_sc: f64,
    pub occupancy: Counts,
    pub true_negatives: u64,
    /// Per-class counts; a class with all-zero counts is absent.
    pub per_class: Vec<Counts>,
    pub miou_ssc: f64,
    pub masked_voxels: u64,
    pub total_voxels: u64,
}

impl EvalReport {
    pub fn class_iou(&self, class: usize) -> Option<f64> {
        self.per_class[class].iou()
    }

    pub fn summary_line(&self) -> String {
        format!("{},{},{}", self.iou_sc, self.miou_ssc, self.masked_voxels)
    }

    pub fn write_class_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "class_id,tp,fp,fn,iou")?;
        for (c, k) in self.per_class.iter().enumerate() {
            let iou = k.iou().map_or("nan".to_string(), |v| v.to_string());
            writeln!(out, "{c},{},{},{},{iou}", k.tp, k.fp, k.fn_)?;
        }
        Ok(())
    }

    pub fn write_summary_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "iou_sc,miou_ssc,masked_voxels")?;
        writeln!(out, "{}", self.summary_line())
    }

    /// Writes the per-class table to `classes` and the summary to `summary`.
    pub fn save(&self, classes: &Path, summary: &Path) -> Result<()> {
        let write = |path: &Path, f: &dyn Fn(&mut BufWriter<File>) -> std::io::Result<()>| {
            let file = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut out = BufWriter::new(file);
            f(&mut out).and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
        };
        write(classes, &|o| self.write_class_csv(o))?;
        write(summary, &|o| self.write_summary_csv(o))
    }
}

/// Compares two label grids over the cells `mask` marks known. An empty
/// comparison (nothing occupied on either side) scores 1.
pub fn compare_grids(pred: &VoxelGrid, gt: &VoxelGrid, mask: &VoxelGrid, class_count: usize) -> Result<EvalReport> {
    let n = mask.spec().cell_count();
    Error::check_len("prediction grid", n, pred.spec().cell_count())?;
    Error::check_len("ground-truth grid", n, gt.spec().cell_count())?;
    if pred.spec().dims != mask.spec().dims || gt.spec().dims != mask.spec().dims {
        return Err(Error::invalid("grid dimensions differ from the mask"));
    }
    let mut occupancy = Counts::default();
    let mut tn = 0;
    let mut masked = 0;
    let mut per_class = vec![Counts::default(); class_count];
    for i in 0..n {
        if !mask.is_known(i) {
            masked += 1;
            continue;
        }
        let (p, g) = (pred.label(i), gt.label(i));
        match (p, g) {
            (Some(_), Some(_)) => occupancy.tp += 1,
            (Some(_), None) => occupancy.fp += 1,
            (None, Some(_)) => occupancy.fn_ += 1,
            (None, None) => tn += 1,
        }
        for (c, k) in per_class.iter_mut().enumerate() {
            let pc = p == Some(c as u16);
            let gc = g == Some(c as u16);
            k.tp += (pc && gc) as u64;
            k.fp += (pc && !gc) as u64;
            k.fn_ += (gc && !pc) as u64;
        }
    }
    if let Some(l) = pred.labels().iter().chain(gt.labels()).flatten().find(|&&l| l as usize >= class_count) {
        return Err(Error::invalid(format!("label {l} exceeds class count {class_count}")));
    }
    Ok(EvalReport::from_counts(occupancy, tn, per_class, masked, n as u64))
}

impl EvalReport {
    fn from_counts(occupancy: Counts, true_negatives: u64, per_class: Vec<Counts>, masked: u64, total: u64) -> Self {
        let present: Vec<f64> = per_class.iter().filter_map(Counts::iou).collect();
        let miou_ssc = if present.is_empty() {
            1.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        EvalReport {
            iou_sc: occupancy.iou().unwrap_or(1.0),
            occupancy,
            true_negatives,
            per_class,
            miou_ssc,
            masked_voxels: masked,
            total_voxels: total,
        }
    }

    /// Sums the tallies of several reports and recomputes the scores, as a
    /// dataset-level evaluation does.
    pub fn pooled(reports: &[EvalReport]) -> Result<EvalReport> {
        let first = reports.first().ok_or_else(|| Error::invalid("nothing to pool"))?;
        let c = first.per_class.len();
        let mut occupancy = Counts::default();
        let mut per_class = vec![Counts::default(); c];
        let (mut tn, mut masked, mut total) = (0, 0, 0);
        for r in reports {
            Error::check_len("pooled class count", c, r.per_class.len())?;
            occupancy = occupancy.add(&r.occupancy);
            for (k, other) in per_class.iter_mut().zip(&r.per_class) {
                *k = k.add(other);
            }
            tn += r.true_negatives;
            masked += r.masked_voxels;
            total += r.total_voxels;
        }
        Ok(EvalReport::from_counts(occupancy, tn, per_class, masked, total))
    }
}

/// Clips both clouds to `volume`, voxelizes them and compares over `mask`.
pub fn evaluate(pred: &SemanticCloud, gt: &SemanticCloud, mask: &VoxelGrid, volume: &EvalVolume) -> Result<EvalReport> {
    if mask.spec().dims != volume.grid().dims {
        return Err(Error::invalid(format!(
            "mask dims {:?} do not match volume dims {:?}",
            mask.spec().dims,
            volume.grid().dims
        )));
    }
    Error::check_len("class count", gt.class_count(), pred.class_count())?;
    let p = voxelize(&volume.clip(pred), volume.grid());
    let g = voxelize(&volume.clip(gt), volume.grid());
    compare_grids(&p, &g, mask, gt.class_count())
}

/// Mean distance from each point of `from` to its nearest neighbour in `to`.
pub fn directed_chamfer(from: &SemanticCloud, to: &SemanticCloud) -> Result<f64> {
    if from.is_empty() || to.is_empty() {
        return Err(Error::EmptyCloud("chamfer distance"));
    }
    let index = SpatialIndex::build(to.positions());
    let mut sum = 0.0;
    for p in from.positions() {
        sum += index.nearest_with_distance(p)?.1.sqrt();
    }
    Ok(sum / from.len() as f64)
}

/// Symmetric Chamfer distance: the average of both directed distances.
pub fn chamfer(a: &SemanticCloud, b: &SemanticCloud) -> Result<f64> {
    Ok(0.5 * (directed_chamfer(a, b)? + directed_chamfer(b, a)?))
}
