//! Densification of a completed cloud: each point spawns `k` copies moved by
//! predicted offsets and carrying the parent's semantics unchanged.
//!
//! The offset network is point-wise, `(3 + C) -> H -> 3k`, with a leaky
//! hidden layer. It is trained against ground truth with a one-directional
//! Chamfer objective: the mean squared distance from every refined point to
//! its nearest ground-truth point.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{self, CheckpointHeader};
use crate::error::{Error, Result};
use crate::geom::{SemanticCloud, SpatialIndex};
use crate::nn::{leaky, leaky_grad, Dense, OptimizerState, ParamSet};
use crate::rng::RngStream;

pub const DEFAULT_OFFSETS: usize = 4;
pub const DEFAULT_REFINER_HIDDEN: usize = 64;

pub(crate) const REFINER_MAGIC: [u8; 8] = *b"PDREFINE";

/// Output weights start this much smaller than fan-in scaling, so a fresh
/// refiner is close to the identity while its `k` copies still differ.
const OUTPUT_INIT_SCALE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerParams {
    class_count: usize,
    offsets: usize,
    pub hidden: Dense,
    pub output: Dense,
}

impl ParamSet for RefinerParams {
    fn layers(&self) -> Vec<&Dense> {
        vec![&self.hidden, &self.output]
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        vec![&mut self.hidden, &mut self.output]
    }
}

impl RefinerParams {
    fn check_shape(class_count: usize, hidden: usize, offsets: usize) -> Result<()> {
        if class_count == 0 || hidden == 0 || offsets == 0 {
            return Err(Error::invalid("refiner class count, width and offset count must be positive"));
        }
        Ok(())
    }

    pub fn zeros(class_count: usize, hidden: usize, offsets: usize) -> Result<Self> {
        Self::check_shape(class_count, hidden, offsets)?;
        Ok(RefinerParams {
            class_count,
            offsets,
            hidden: Dense::zeros(3 + class_count, hidden),
            output: Dense::zeros(hidden, 3 * offsets),
        })
    }

    pub fn init(class_count: usize, hidden: usize, offsets: usize, seed: u64) -> Result<Self> {
        Self::check_shape(class_count, hidden, offsets)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut output = Dense::init(hidden, 3 * offsets, &mut rng);
        output.weight.iter_mut().for_each(|w| *w *= OUTPUT_INIT_SCALE);
        Ok(RefinerParams {
            class_count,
            offsets,
            hidden: Dense::init(3 + class_count, hidden, &mut rng),
            output,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Copies per input point, `k`.
    pub fn offsets(&self) -> usize {
        self.offsets
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden.outputs()
    }

    fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            magic: REFINER_MAGIC,
            class_count: self.class_count as u32,
            hidden: self.hidden_width() as u32,
            extra: self.offsets as u32,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, &self.header(), &self.to_flat())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (h, flat) = checkpoint::read(path, REFINER_MAGIC)?;
        let mut params = Self::zeros(h.class_count as usize, h.hidden as usize, h.extra as usize)
            .map_err(|e| Error::format(path, e.to_string()))?;
        params
            .assign_flat(&flat)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(params)
    }

    fn input_of(cloud: &SemanticCloud, i: usize, x: &mut [f64]) {
        x[..3].copy_from_slice(&cloud.positions()[i]);
        x[3..].copy_from_slice(cloud.semantics_of(i));
    }

    /// Offsets for every point, `3k` values per point.
    fn predict(&self, cloud: &SemanticCloud) -> (Vec<f64>, Vec<f64>) {
        let (w, h, o) = (3 + self.class_count, self.hidden_width(), 3 * self.offsets);
        let mut pre = vec![0.0; cloud.len() * h];
        let mut out = vec![0.0; cloud.len() * o];
        let mut x = vec![0.0; w];
        for i in 0..cloud.len() {
            Self::input_of(cloud, i, &mut x);
            let z = &mut pre[i * h..(i + 1) * h];
            self.hidden.forward(&x, z);
            let a: Vec<f64> = z.iter().map(|&v| leaky(v)).collect();
            self.output.forward(&a, &mut out[i * o..(i + 1) * o]);
        }
        (pre, out)
    }
}

/// `k * M` points: point `m * k + j` sits at `p_m + b_j(m)` with the
/// semantics of point `m`.
pub fn refine(completed: &SemanticCloud, params: &RefinerParams) -> Result<SemanticCloud> {
    if completed.is_empty() {
        return Err(Error::EmptyCloud("refinement"));
    }
    Error::check_len("refiner class count", params.class_count, completed.class_count())?;
    let (_, offsets) = params.predict(completed);
    Ok(apply_offsets(completed, &offsets, params.offsets))
}

fn apply_offsets(cloud: &SemanticCloud, offsets: &[f64], k: usize) -> SemanticCloud {
    let c = cloud.class_count();
    let mut positions = Vec::with_capacity(cloud.len() * k);
    let mut semantics = Vec::with_capacity(cloud.len() * k * c);
    for (m, p) in cloud.positions().iter().enumerate() {
        for j in 0..k {
            let b = &offsets[(m * k + j) * 3..(m * k + j) * 3 + 3];
            positions.push([p[0] + b[0], p[1] + b[1], p[2] + b[2]]);
            semantics.extend_from_slice(cloud.semantics_of(m));
        }
    }
    SemanticCloud::from_parts_unchecked(c, positions, semantics)
}

/// Mean squared distance from each refined point to its nearest point of
/// `target`, with the gradient with respect to the refined positions.
pub fn chamfer_loss(refined: &[[f64; 3]], target: &SpatialIndex) -> Result<(f64, Vec<[f64; 3]>)> {
    if refined.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud("refinement loss"));
    }
    let n = refined.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(refined.len());
    for q in refined {
        let (j, d2) = target.nearest_with_distance(q)?;
        let g = target.positions()[j];
        loss += d2;
        grad.push(std::array::from_fn(|a| 2.0 * (q[a] - g[a]) / n));
    }
    Ok((loss / n, grad))
}

/// Loss and parameter gradients for one `(completed, ground truth)` pair.
pub fn refiner_gradients(
    params: &RefinerParams,
    completed: &SemanticCloud,
    target: &SpatialIndex,
) -> Result<(f64, RefinerParams)> {
    if completed.is_empty() {
        return Err(Error::EmptyCloud("refinement"));
    }
    Error::check_len("refiner class count", params.class_count, completed.class_count())?;
    let k = params.offsets;
    let (w, h, o) = (3 + params.class_count, params.hidden_width(), 3 * k);
    let (pre, offsets) = params.predict(completed);
    let refined = apply_offsets(completed, &offsets, k);
    let (loss, d_pos) = chamfer_loss(refined.positions(), target)?;
    let mut grads = RefinerParams::zeros(params.class_count, h, k)?;
    let mut x = vec![0.0; w];
    let mut dy = vec![0.0; o];
    let mut da = vec![0.0; h];
    for m in 0..completed.len() {
        for j in 0..k {
            dy[3 * j..3 * j + 3].copy_from_slice(&d_pos[m * k + j]);
        }
        let z = &pre[m * h..(m + 1) * h];
        let a: Vec<f64> = z.iter().map(|&v| leaky(v)).collect();
        params.output.backward(&a, &dy, &mut grads.output, Some(&mut da));
        for (d, &zv) in da.iter_mut().zip(z) {
            *d *= leaky_grad(zv);
        }
        RefinerParams::input_of(completed, m, &mut x);
        params.hidden.backward(&x, &da, &mut grads.hidden, None);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefinerSettings {
    pub offsets: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for RefinerSettings {
    fn default() -> Self {
        RefinerSettings {
            offsets: DEFAULT_OFFSETS,
            hidden: DEFAULT_REFINER_HIDDEN,
            epochs: 20,
            learning_rate: 1e-3,
        }
    }
}

/// Fits a refiner on `(completed, ground truth)` pairs, one update per pair
/// per epoch in a shuffled order. Returns the parameters and the loss of
/// every update.
pub fn train_refiner(
    pairs: &[(SemanticCloud, SemanticCloud)],
    settings: &RefinerSettings,
    seed: u64,
) -> Result<(RefinerParams, Vec<f64>)> {
    let first = pairs.first().ok_or_else(|| Error::invalid("refiner training needs at least one pair"))?;
    let c = first.0.class_count();
    let stream = RngStream::new(seed).derive("refiner");
    let mut params = RefinerParams::init(c, settings.hidden, settings.offsets, seed)?;
    let mut opt = OptimizerState::for_params(&params, settings.learning_rate);
    let indices: Vec<SpatialIndex> = pairs
        .iter()
        .map(|(_, gt)| {
            if gt.is_empty() {
                Err(Error::EmptyCloud("refiner ground truth"))
            } else {
                Ok(SpatialIndex::build(gt.positions()))
            }
        })
        .collect::<Result<_>>()?;
    let mut history = Vec::with_capacity(settings.epochs * pairs.len());
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..settings.epochs {
        order.sort_unstable();
        order.shuffle(&mut stream.rng(epoch as u64, 0));
        for &i in &order {
            let (loss, grads) = refiner_gradients(&params, &pairs[i].0, &indices[i])?;
            if !loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite refiner loss in epoch {epoch}")));
            }
            opt.update(&mut params, &grads)?;
            history.push(loss);
        }
    }
    Ok((params, history))
}
