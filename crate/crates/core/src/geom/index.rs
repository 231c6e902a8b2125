use super::squared_distance;
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 8;

/// Static kd-tree over a snapshot of point positions.
///
/// Queries return exactly what an exhaustive scan would: the point with the
/// smallest squared distance, ties going to the lowest point index.
#[derive(Debug, Clone)]
pub struct SpatialIndex {
    points: Vec<[f64; 3]>,
    order: Vec<usize>,
    // Split axis for the node whose pivot sits at `order[mid]`.
    axes: Vec<u8>,
}

impl SpatialIndex {
    pub fn build(positions: &[[f64; 3]]) -> Self {
        let points = positions.to_vec();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut axes = vec![0u8; points.len()];
        build_range(&points, &mut order, &mut axes, 0);
        SpatialIndex { points, order, axes }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn nearest(&self, query: &[f64; 3]) -> Result<usize> {
        self.nearest_with_distance(query).map(|(i, _)| i)
    }

    /// Nearest point index together with its squared distance.
    pub fn nearest_with_distance(&self, query: &[f64; 3]) -> Result<(usize, f64)> {
        if self.points.is_empty() {
            return Err(Error::EmptyCloud("nearest-neighbor query"));
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, self.order.len(), query, &mut best);
        Ok(best)
    }

    fn search(&self, lo: usize, hi: usize, q: &[f64; 3], best: &mut (usize, f64)) {
        if hi - lo <= LEAF_SIZE {
            for &i in &self.order[lo..hi] {
                offer(best, i, squared_distance(q, &self.points[i]));
            }
            return;
        }
        let mid = lo + (hi - lo) / 2;
        let pivot = self.order[mid];
        let axis = self.axes[mid] as usize;
        offer(best, pivot, squared_distance(q, &self.points[pivot]));
        let diff = q[axis] - self.points[pivot][axis];
        let (near, far) = if diff < 0.0 {
            ((lo, mid), (mid + 1, hi))
        } else {
            ((mid + 1, hi), (lo, mid))
        };
        self.search(near.0, near.1, q, best);
        // Equal bound still has to be explored: a tie may carry a lower index.
        if diff * diff <= best.1 {
            self.search(far.0, far.1, q, best);
        }
    }
}

#[inline]
fn offer(best: &mut (usize, f64), index: usize, d2: f64) {
    if d2 < best.1 || (d2 == best.1 && index < best.0) {
        *best = (index, d2);
    }
}

fn build_range(points: &[[f64; 3]], order: &mut [usize], axes: &mut [u8], offset: usize) {
    let n = order.len();
    if n <= LEAF_SIZE {
        return;
    }
    let axis = widest_axis(points, order);
    let mid = n / 2;
    order.select_nth_unstable_by(mid, |&a, &b| {
        points[a][axis]
            .total_cmp(&points[b][axis])
            .then(a.cmp(&b))
    });
    axes[offset + mid] = axis as u8;
    let (left, rest) = order.split_at_mut(mid);
    build_range(points, left, axes, offset);
    build_range(points, &mut rest[1..], axes, offset + mid + 1);
}

fn widest_axis(points: &[[f64; 3]], order: &[usize]) -> usize {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in order {
        for a in 0..3 {
            lo[a] = lo[a].min(points[i][a]);
            hi[a] = hi[a].max(points[i][a]);
        }
    }
    let spread = [hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]];
    let mut axis = 0;
    for a in 1..3 {
        if spread[a] > spread[axis] {
            axis = a;
        }
    }
    axis
}
