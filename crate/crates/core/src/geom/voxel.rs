use std::collections::HashMap;

use super::{argmax_class, SemanticCloud};
use crate::error::{Error, Result};

/// Placement and resolution of a regular voxel grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub origin: [f64; 3],
    pub voxel_size: f64,
    pub dims: [usize; 3],
}

impl GridSpec {
    pub fn new(origin: [f64; 3], voxel_size: f64, dims: [usize; 3]) -> Result<Self> {
        if !(voxel_size > 0.0) || !voxel_size.is_finite() {
            return Err(Error::invalid(format!(
                "voxel size must be positive, got {voxel_size}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::invalid(format!("grid dims must be positive, got {dims:?}")));
        }
        if origin.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(GridSpec {
            origin,
            voxel_size,
            dims,
        })
    }

    pub fn cell_count(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Half-open binning: a point belongs to `floor((p - origin) / voxel_size)`.
    pub fn cell_of(&self, p: &[f64; 3]) -> Option<[usize; 3]> {
        let mut idx = [0usize; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0) || f >= self.dims[a] as f64 {
                return None;
            }
            idx[a] = f as usize;
        }
        Some(idx)
    }

    pub fn linear(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    pub fn unlinear(&self, mut i: usize) -> [usize; 3] {
        let z = i % self.dims[2];
        i /= self.dims[2];
        let y = i % self.dims[1];
        [i / self.dims[1], y, z]
    }

    pub fn cell_min(&self, idx: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + idx[a] as f64 * self.voxel_size)
    }

    pub fn cell_center(&self, idx: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + (idx[a] as f64 + 0.5) * self.voxel_size)
    }

    pub fn extent_max(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + self.dims[a] as f64 * self.voxel_size)
    }
}

/// Occupancy and label per cell, plus a known/unknown flag.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    spec: GridSpec,
    labels: Vec<Option<u16>>,
    known: Vec<bool>,
}

impl VoxelGrid {
    pub fn new_empty(spec: GridSpec) -> Self {
        let n = spec.cell_count();
        VoxelGrid {
            spec,
            labels: vec![None; n],
            known: vec![true; n],
        }
    }

    /// All-unknown grid, the starting point for ray-based masks.
    pub fn new_unknown(spec: GridSpec) -> Self {
        let mut grid = Self::new_empty(spec);
        grid.known.fill(false);
        grid
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn label(&self, i: usize) -> Option<u16> {
        self.labels[i]
    }

    pub fn labels(&self) -> &[Option<u16>] {
        &self.labels
    }

    pub fn is_known(&self, i: usize) -> bool {
        self.known[i]
    }

    pub fn known(&self) -> &[bool] {
        &self.known
    }

    pub fn set_known(&mut self, i: usize, known: bool) {
        self.known[i] = known;
    }

    pub fn set_label(&mut self, i: usize, label: Option<u16>) {
        self.labels[i] = label;
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    pub fn known_count(&self) -> usize {
        self.known.iter().filter(|&&k| k).count()
    }

    /// Linear indices of occupied cells in ascending order.
    pub fn occupied_cells(&self) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|_| i))
            .collect()
    }
}

/// Bins a cloud into the grid. A cell takes the majority argmax class of the
/// points inside it, ties going to the lowest class id. Points outside the
/// grid are dropped.
pub fn voxelize(cloud: &SemanticCloud, spec: &GridSpec) -> VoxelGrid {
    let c = cloud.class_count();
    let mut votes: HashMap<usize, Vec<u32>> = HashMap::new();
    for (i, p) in cloud.positions().iter().enumerate() {
        if let Some(idx) = spec.cell_of(p) {
            let class = argmax_class(cloud.semantics_of(i));
            votes.entry(spec.linear(idx)).or_insert_with(|| vec![0; c])[class] += 1;
        }
    }
    let mut grid = VoxelGrid::new_empty(*spec);
    for (cell, counts) in votes {
        let mut best = 0;
        for k in 1..c {
            if counts[k] > counts[best] {
                best = k;
            }
        }
        grid.labels[cell] = Some(best as u16);
    }
    grid
}
