//! Conditioned point-wise noise predictor.
//!
//! Per noisy point the network:
//!
//! 1. finds the closest condition point and fetches its encoded feature;
//! 2. runs a point-wise backbone `(3 + C) -> H -> H -> H -> (3 + C)` on the
//!    offset to that condition point concatenated with the noisy semantics;
//! 3. after each hidden layer multiplies the features element-wise by a
//!    modulation `W' = MLP_w([MLP_c(condition feature) ; MLP_t(step embedding)])`,
//!    one head per hidden layer.
//!
//! `MLP_w` is a single affine layer, so its output splits into a
//! condition-only part and a step-only part. The condition part is computed
//! once per condition point in [`ConditionEncoding`] and reused for every
//! noisy point (and every reverse step) that maps to it.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::{self, CheckpointHeader};
use crate::diffusion::{Denoiser, NoisyCloud};
use crate::error::{Error, Result};
use crate::geom::{SemanticCloud, SpatialIndex};
use crate::nn::{leaky, leaky_grad, Dense, ParamSet};

pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_EMBED_DIM: usize = 16;
pub const FUSION_SITES: usize = 3;

pub(crate) const DENOISER_MAGIC: [u8; 8] = *b"PDDENOIS";

const CHUNK: usize = 256;

/// Sinusoidal step encoding: pairs `(sin(t w_k), cos(t w_k))` with
/// `w_k = 10000^(-2k / dim)`.
pub fn embed_step(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "step embedding dim must be even and positive, got {dim}"
        )));
    }
    if !(t >= 0.0) {
        return Err(Error::invalid(format!("step must be non-negative, got {t}")));
    }
    let mut out = Vec::with_capacity(dim);
    for k in 0..dim / 2 {
        let w = 10000f64.powf(-2.0 * k as f64 / dim as f64);
        out.push((t * w).sin());
        out.push((t * w).cos());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DenoiserShape {
    pub class_count: usize,
    pub hidden: usize,
    pub embed_dim: usize,
}

impl DenoiserShape {
    pub fn new(class_count: usize, hidden: usize, embed_dim: usize) -> Result<Self> {
        if class_count == 0 || hidden == 0 {
            return Err(Error::invalid("class count and hidden width must be positive"));
        }
        if embed_dim == 0 || !embed_dim.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "step embedding dim must be even and positive, got {embed_dim}"
            )));
        }
        Ok(DenoiserShape {
            class_count,
            hidden,
            embed_dim,
        })
    }

    /// Channels per point, `3 + C`.
    pub fn width(&self) -> usize {
        3 + self.class_count
    }

    pub fn param_count(&self) -> usize {
        let (w, h, e) = (self.width(), self.hidden, self.embed_dim);
        let dense = |i: usize, o: usize| i * o + o;
        let encoder = dense(w, h) + dense(h, h);
        let backbone = dense(w, h) + 2 * dense(h, h) + dense(h, w);
        let site = dense(h, h) + dense(e, h) + dense(2 * h, h);
        encoder + backbone + FUSION_SITES * site
    }
}

/// One modulation head.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSite {
    /// Condition feature -> H.
    pub condition: Dense,
    /// Step embedding -> H.
    pub step: Dense,
    /// `[condition ; step]` (2H) -> H, no activation.
    pub mix: Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    shape: DenoiserShape,
    pub encoder: [Dense; 2],
    pub backbone: [Dense; 4],
    pub sites: [FusionSite; FUSION_SITES],
}

impl ParamSet for DenoiserParams {
    fn layers(&self) -> Vec<&Dense> {
        let mut v: Vec<&Dense> = self.encoder.iter().chain(&self.backbone).collect();
        for s in &self.sites {
            v.extend([&s.condition, &s.step, &s.mix]);
        }
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = self.encoder.iter_mut().chain(&mut self.backbone).collect();
        for s in &mut self.sites {
            v.extend([&mut s.condition, &mut s.step, &mut s.mix]);
        }
        v
    }
}

impl DenoiserParams {
    pub fn zeros(shape: DenoiserShape) -> Self {
        let (w, h, e) = (shape.width(), shape.hidden, shape.embed_dim);
        let site = || FusionSite {
            condition: Dense::zeros(h, h),
            step: Dense::zeros(e, h),
            mix: Dense::zeros(2 * h, h),
        };
        DenoiserParams {
            shape,
            encoder: [Dense::zeros(w, h), Dense::zeros(h, h)],
            backbone: [
                Dense::zeros(w, h),
                Dense::zeros(h, h),
                Dense::zeros(h, h),
                Dense::zeros(h, w),
            ],
            sites: [site(), site(), site()],
        }
    }

    /// Fan-in scaled uniform weights. Modulation heads start with a unit
    /// bias so that `W'` is centred on the identity.
    pub fn init(shape: DenoiserShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h, e) = (shape.width(), shape.hidden, shape.embed_dim);
        let encoder = [Dense::init(w, h, &mut rng), Dense::init(h, h, &mut rng)];
        let backbone = [
            Dense::init(w, h, &mut rng),
            Dense::init(h, h, &mut rng),
            Dense::init(h, h, &mut rng),
            Dense::init(h, w, &mut rng),
        ];
        let mut site = || {
            let mut mix = Dense::init(2 * h, h, &mut rng);
            mix.bias.fill(1.0);
            FusionSite {
                condition: Dense::init(h, h, &mut rng),
                step: Dense::init(e, h, &mut rng),
                mix,
            }
        };
        let sites = [site(), site(), site()];
        DenoiserParams {
            shape,
            encoder,
            backbone,
            sites,
        }
    }

    pub fn shape(&self) -> DenoiserShape {
        self.shape
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, &self.header(), &self.to_flat())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&self.header(), &self.to_flat())
    }

    fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            magic: DENOISER_MAGIC,
            class_count: self.shape.class_count as u32,
            hidden: self.shape.hidden as u32,
            extra: self.shape.embed_dim as u32,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, flat) = checkpoint::read(path, DENOISER_MAGIC)?;
        let shape = DenoiserShape::new(
            header.class_count as usize,
            header.hidden as usize,
            header.extra as usize,
        )
        .map_err(|e| Error::format(path, e.to_string()))?;
        let mut params = DenoiserParams::zeros(shape);
        params
            .assign_flat(&flat)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(params)
    }

    /// Predicted noise for every point of `noisy`.
    pub fn predict_noise(
        &self,
        noisy: &NoisyCloud,
        condition: &SemanticCloud,
        t: usize,
    ) -> Result<Vec<f64>> {
        let encoding = encode_condition(condition, self)?;
        self.predict_with(&encoding, noisy, t)
    }

    /// Like [`predict_noise`](Self::predict_noise) with a precomputed encoding.
    pub fn predict_with(
        &self,
        encoding: &ConditionEncoding,
        noisy: &NoisyCloud,
        t: usize,
    ) -> Result<Vec<f64>> {
        let step = StepTerms::new(self, t)?;
        let pass = self.run(encoding, &step, noisy, false)?;
        Ok(pass.output)
    }

    /// Forward pass that keeps the intermediates needed by [`backward`](Self::backward).
    pub fn forward(
        &self,
        noisy: &NoisyCloud,
        condition: &SemanticCloud,
        t: usize,
    ) -> Result<(Vec<f64>, ForwardRecord)> {
        let encoding = encode_condition(condition, self)?;
        let step = StepTerms::new(self, t)?;
        let pass = self.run(&encoding, &step, noisy, true)?;
        let record = ForwardRecord {
            shape: self.shape,
            encoding,
            step,
            nearest: pass.nearest,
            layers: pass.layers.expect("forward keeps intermediates"),
        };
        Ok((pass.output, record))
    }

    fn run(
        &self,
        enc: &ConditionEncoding,
        step: &StepTerms,
        noisy: &NoisyCloud,
        keep: bool,
    ) -> Result<Pass> {
        Error::check_len("noisy cloud class count", self.shape.class_count, noisy.class_count())?;
        Error::check_len("condition encoding width", self.shape.hidden, enc.hidden)?;
        let (w, h) = (self.shape.width(), self.shape.hidden);
        let n = noisy.len();
        let mut output = vec![0.0; n * w];
        let mut nearest = vec![0usize; n];
        let mut layers = keep.then(|| PointLayers::new(n, w, h));

        let modulation = |j: usize, s: usize, o: usize| enc.projected[s][j * h + o] + step.projected[s][o];

        let body = |i: usize, out: &mut [f64], near: &mut usize, rec: Option<PointSlices<'_>>| {
            let q = noisy.noisy_position(i);
            // index was built over a non-empty cloud
            let j = enc.index.nearest(&q).unwrap_or(0);
            *near = j;
            let mut x0 = vec![0.0; w];
            noisy.write_point(i, &mut x0);
            let cp = enc.positions[j];
            for a in 0..3 {
                x0[a] -= cp[a];
            }
            let mut input = x0.clone();
            let mut z = vec![0.0; h];
            let mut zs: [Vec<f64>; FUSION_SITES] = Default::default();
            let mut fs: [Vec<f64>; FUSION_SITES] = Default::default();
            for s in 0..FUSION_SITES {
                self.backbone[s].forward(&input, &mut z);
                let f: Vec<f64> = (0..h).map(|o| leaky(z[o]) * modulation(j, s, o)).collect();
                zs[s] = z.clone();
                fs[s] = f.clone();
                input = f;
            }
            self.backbone[3].forward(&input, out);
            if let Some(rec) = rec {
                rec.x0.copy_from_slice(&x0);
                for s in 0..FUSION_SITES {
                    rec.z[s].copy_from_slice(&zs[s]);
                    rec.f[s].copy_from_slice(&fs[s]);
                }
            }
        };

        match layers.as_mut() {
            Some(rec) => {
                let slices = rec.chunks(CHUNK);
                output
                    .par_chunks_mut(CHUNK * w)
                    .zip(nearest.par_chunks_mut(CHUNK))
                    .zip(slices)
                    .enumerate()
                    .for_each(|(c, ((out, near), mut rec))| {
                        for k in 0..near.len() {
                            body(c * CHUNK + k, &mut out[k * w..(k + 1) * w], &mut near[k], Some(rec.point(k)));
                        }
                    });
            }
            None => {
                output
                    .par_chunks_mut(CHUNK * w)
                    .zip(nearest.par_chunks_mut(CHUNK))
                    .enumerate()
                    .for_each(|(c, (out, near))| {
                        for k in 0..near.len() {
                            body(c * CHUNK + k, &mut out[k * w..(k + 1) * w], &mut near[k], None);
                        }
                    });
            }
        }
        Ok(Pass {
            output,
            nearest,
            layers,
        })
    }

    /// Exact reverse-mode gradients of the recorded forward pass for the
    /// upstream gradient `grad_output` (one `3 + C` row per noisy point).
    pub fn backward(&self, record: &ForwardRecord, grad_output: &[f64]) -> Result<Gradients> {
        if record.shape != self.shape {
            return Err(Error::invalid(
                "forward record was produced by a network of a different shape",
            ));
        }
        let (w, h) = (self.shape.width(), self.shape.hidden);
        let n = record.nearest.len();
        Error::check_len("output gradient", n * w, grad_output.len())?;
        let enc = &record.encoding;
        let step = &record.step;
        let m = enc.len();
        let layers = &record.layers;

        // Noisy-point side, reduced over fixed chunks in order.
        struct Partial {
            backbone: [Dense; 4],
            d_modulation: [Vec<f64>; FUSION_SITES],
            d_inputs: Vec<f64>,
        }
        let partials: Vec<Partial> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|c| {
                let range = c * CHUNK..((c + 1) * CHUNK).min(n);
                let mut part = Partial {
                    backbone: std::array::from_fn(|l| {
                        Dense::zeros(self.backbone[l].inputs(), self.backbone[l].outputs())
                    }),
                    d_modulation: std::array::from_fn(|_| vec![0.0; m * h]),
                    d_inputs: vec![0.0; range.len() * w],
                };
                let mut d_in = vec![0.0; h];
                let mut d_z = vec![0.0; h];
                for (k, i) in range.enumerate() {
                    let j = record.nearest[i];
                    let dy = &grad_output[i * w..(i + 1) * w];
                    let f_last = &layers.f[FUSION_SITES - 1][i * h..(i + 1) * h];
                    self.backbone[3].backward(f_last, dy, &mut part.backbone[3], Some(&mut d_in));
                    for s in (0..FUSION_SITES).rev() {
                        let z = &layers.z[s][i * h..(i + 1) * h];
                        let dm = &mut part.d_modulation[s][j * h..(j + 1) * h];
                        for o in 0..h {
                            let wmod = enc.projected[s][j * h + o] + step.projected[s][o];
                            dm[o] += d_in[o] * leaky(z[o]);
                            d_z[o] = d_in[o] * wmod * leaky_grad(z[o]);
                        }
                        if s == 0 {
                            let x = &layers.x0[i * w..(i + 1) * w];
                            let dx = &mut part.d_inputs[k * w..(k + 1) * w];
                            self.backbone[0].backward(x, &d_z, &mut part.backbone[0], Some(dx));
                        } else {
                            let x = &layers.f[s - 1][i * h..(i + 1) * h];
                            self.backbone[s].backward(x, &d_z, &mut part.backbone[s], Some(&mut d_in));
                        }
                    }
                }
                part
            })
            .collect();

        let mut grads = DenoiserParams::zeros(self.shape);
        let mut d_mod: [Vec<f64>; FUSION_SITES] = std::array::from_fn(|_| vec![0.0; m * h]);
        let mut d_inputs = Vec::with_capacity(n * w);
        for part in &partials {
            for l in 0..4 {
                add_dense(&mut grads.backbone[l], &part.backbone[l]);
            }
            for s in 0..FUSION_SITES {
                for (a, b) in d_mod[s].iter_mut().zip(&part.d_modulation[s]) {
                    *a += b;
                }
            }
            d_inputs.extend_from_slice(&part.d_inputs);
        }

        // Condition side. Rows [0, H) of each mix layer see the condition
        // branch, rows [H, 2H) the step branch.
        let mut d_step_act: [Vec<f64>; FUSION_SITES] = std::array::from_fn(|_| vec![0.0; h]);
        let mut d_feature = vec![0.0; m * h];
        for s in 0..FUSION_SITES {
            let site = &self.sites[s];
            let gsite = &mut grads.sites[s];
            let mut d_cond_total = vec![0.0; h];
            for j in 0..m {
                let dm = &d_mod[s][j * h..(j + 1) * h];
                if dm.iter().all(|&x| x == 0.0) {
                    continue;
                }
                for o in 0..h {
                    d_cond_total[o] += dm[o];
                }
                let c_act = &enc.site_act[s][j * h..(j + 1) * h];
                let c_pre = &enc.site_pre[s][j * h..(j + 1) * h];
                let mut d_pre = vec![0.0; h];
                for i in 0..h {
                    let row = i * h;
                    let mut acc = 0.0;
                    for o in 0..h {
                        gsite.mix.weight[row + o] += c_act[i] * dm[o];
                        acc += site.mix.weight[row + o] * dm[o];
                    }
                    d_pre[i] = acc * leaky_grad(c_pre[i]);
                }
                let feature = &enc.features[j * h..(j + 1) * h];
                let mut d_f = vec![0.0; h];
                site.condition
                    .backward(feature, &d_pre, &mut gsite.condition, Some(&mut d_f));
                for o in 0..h {
                    d_feature[j * h + o] += d_f[o];
                }
            }
            // step branch and bias see the sum over condition points
            for o in 0..h {
                gsite.mix.bias[o] += d_cond_total[o];
            }
            for i in 0..h {
                let row = (h + i) * h;
                let mut acc = 0.0;
                for o in 0..h {
                    gsite.mix.weight[row + o] += step.act[s][i] * d_cond_total[o];
                    acc += site.mix.weight[row + o] * d_cond_total[o];
                }
                d_step_act[s][i] = acc;
            }
            let d_pre: Vec<f64> = (0..h)
                .map(|i| d_step_act[s][i] * leaky_grad(step.pre[s][i]))
                .collect();
            site.step.backward(&step.embedding, &d_pre, &mut gsite.step, None);
        }

        // Condition encoder.
        let mut d_a2 = vec![0.0; h];
        let mut d_h1 = vec![0.0; h];
        let mut d_a1 = vec![0.0; h];
        for j in 0..m {
            let df = &d_feature[j * h..(j + 1) * h];
            if df.iter().all(|&x| x == 0.0) {
                continue;
            }
            let a2 = &enc.pre2[j * h..(j + 1) * h];
            for o in 0..h {
                d_a2[o] = df[o] * leaky_grad(a2[o]);
            }
            let h1: Vec<f64> = enc.pre1[j * h..(j + 1) * h].iter().map(|&x| leaky(x)).collect();
            self.encoder[1].backward(&h1, &d_a2, &mut grads.encoder[1], Some(&mut d_h1));
            let a1 = &enc.pre1[j * h..(j + 1) * h];
            for o in 0..h {
                d_a1[o] = d_h1[o] * leaky_grad(a1[o]);
            }
            let x = &enc.inputs[j * w..(j + 1) * w];
            self.encoder[0].backward(x, &d_a1, &mut grads.encoder[0], None);
        }

        Ok(Gradients {
            params: grads,
            inputs: d_inputs,
        })
    }
}

fn add_dense(acc: &mut Dense, other: &Dense) {
    for (a, b) in acc.weight.iter_mut().zip(&other.weight) {
        *a += b;
    }
    for (a, b) in acc.bias.iter_mut().zip(&other.bias) {
        *a += b;
    }
}

/// Element-wise modulation of a hidden feature by one fusion head:
/// `F (.) MLP_w([MLP_c(condition) ; MLP_t(step)])`.
pub fn fuse(
    feature: &[f64],
    condition_feature: &[f64],
    step_embedding: &[f64],
    site: &FusionSite,
) -> Result<Vec<f64>> {
    let h = site.mix.outputs();
    Error::check_len("fused feature", h, feature.len())?;
    Error::check_len("condition feature", site.condition.inputs(), condition_feature.len())?;
    Error::check_len("step embedding", site.step.inputs(), step_embedding.len())?;
    Error::check_len("modulation input", site.mix.inputs(), site.condition.outputs() + site.step.outputs())?;
    let mut c = vec![0.0; site.condition.outputs()];
    site.condition.forward(condition_feature, &mut c);
    let mut tau = vec![0.0; site.step.outputs()];
    site.step.forward(step_embedding, &mut tau);
    let joined: Vec<f64> = c.iter().chain(&tau).map(|&x| leaky(x)).collect();
    let mut modulation = vec![0.0; h];
    site.mix.forward(&joined, &mut modulation);
    Ok(feature.iter().zip(&modulation).map(|(f, m)| f * m).collect())
}

/// Features of every condition point, the index used to align noisy points
/// with them, and the condition half of each modulation head.
#[derive(Debug, Clone)]
pub struct ConditionEncoding {
    hidden: usize,
    index: SpatialIndex,
    positions: Vec<[f64; 3]>,
    inputs: Vec<f64>,
    pre1: Vec<f64>,
    pre2: Vec<f64>,
    features: Vec<f64>,
    site_pre: [Vec<f64>; FUSION_SITES],
    site_act: [Vec<f64>; FUSION_SITES],
    // condition rows of each mix layer applied to site_act, without bias
    projected: [Vec<f64>; FUSION_SITES],
}

impl ConditionEncoding {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn index(&self) -> &SpatialIndex {
        &self.index
    }

    /// Encoded H-feature of condition point `j`.
    pub fn feature(&self, j: usize) -> &[f64] {
        &self.features[j * self.hidden..(j + 1) * self.hidden]
    }
}

/// Runs the condition encoder over every point of `partial`.
pub fn encode_condition(partial: &SemanticCloud, params: &DenoiserParams) -> Result<ConditionEncoding> {
    if partial.is_empty() {
        return Err(Error::EmptyCloud("condition encoding"));
    }
    let shape = params.shape;
    Error::check_len("condition class count", shape.class_count, partial.class_count())?;
    let (w, h) = (shape.width(), shape.hidden);
    let m = partial.len();
    let mut inputs = vec![0.0; m * w];
    for (j, row) in inputs.chunks_exact_mut(w).enumerate() {
        row[..3].copy_from_slice(&partial.positions()[j]);
        row[3..].copy_from_slice(partial.semantics_of(j));
    }
    let mut pre1 = vec![0.0; m * h];
    let mut pre2 = vec![0.0; m * h];
    let mut features = vec![0.0; m * h];
    let mut site_pre: [Vec<f64>; FUSION_SITES] = std::array::from_fn(|_| vec![0.0; m * h]);
    let mut site_act: [Vec<f64>; FUSION_SITES] = std::array::from_fn(|_| vec![0.0; m * h]);
    let mut projected: [Vec<f64>; FUSION_SITES] = std::array::from_fn(|_| vec![0.0; m * h]);
    {
        let [sp0, sp1, sp2] = &mut site_pre;
        let [sa0, sa1, sa2] = &mut site_act;
        let [pj0, pj1, pj2] = &mut projected;
        inputs
            .par_chunks(w)
            .zip(pre1.par_chunks_mut(h))
            .zip(pre2.par_chunks_mut(h))
            .zip(features.par_chunks_mut(h))
            .zip(sp0.par_chunks_mut(h).zip(sp1.par_chunks_mut(h)).zip(sp2.par_chunks_mut(h)))
            .zip(sa0.par_chunks_mut(h).zip(sa1.par_chunks_mut(h)).zip(sa2.par_chunks_mut(h)))
            .zip(pj0.par_chunks_mut(h).zip(pj1.par_chunks_mut(h)).zip(pj2.par_chunks_mut(h)))
            .for_each(|((((((x, a1), a2), f), ((p0, p1), p2)), ((s0, s1), s2)), ((q0, q1), q2))| {
                params.encoder[0].forward(x, a1);
                let h1: Vec<f64> = a1.iter().map(|&v| leaky(v)).collect();
                params.encoder[1].forward(&h1, a2);
                for (fo, &v) in f.iter_mut().zip(a2.iter()) {
                    *fo = leaky(v);
                }
                let pres = [p0, p1, p2];
                let acts = [s0, s1, s2];
                let projs = [q0, q1, q2];
                for (s, ((pre, act), proj)) in pres.into_iter().zip(acts).zip(projs).enumerate() {
                    let site = &params.sites[s];
                    site.condition.forward(f, pre);
                    for (a, &p) in act.iter_mut().zip(pre.iter()) {
                        *a = leaky(p);
                    }
                    proj.fill(0.0);
                    for (i, &ai) in act.iter().enumerate() {
                        let row = &site.mix.weight[i * h..(i + 1) * h];
                        for (po, &wv) in proj.iter_mut().zip(row) {
                            *po += ai * wv;
                        }
                    }
                }
            });
    }
    Ok(ConditionEncoding {
        hidden: h,
        index: SpatialIndex::build(partial.positions()),
        positions: partial.positions().to_vec(),
        inputs,
        pre1,
        pre2,
        features,
        site_pre,
        site_act,
        projected,
    })
}

/// Step-dependent half of each modulation head.
#[derive(Debug, Clone)]
struct StepTerms {
    embedding: Vec<f64>,
    pre: [Vec<f64>; FUSION_SITES],
    act: [Vec<f64>; FUSION_SITES],
    // step rows of each mix layer applied to act, plus the mix bias
    projected: [Vec<f64>; FUSION_SITES],
}

impl StepTerms {
    fn new(params: &DenoiserParams, t: usize) -> Result<Self> {
        let h = params.shape.hidden;
        let embedding = embed_step(t as f64, params.shape.embed_dim)?;
        let mut pre: [Vec<f64>; FUSION_SITES] = Default::default();
        let mut act: [Vec<f64>; FUSION_SITES] = Default::default();
        let mut projected: [Vec<f64>; FUSION_SITES] = Default::default();
        for s in 0..FUSION_SITES {
            let site = &params.sites[s];
            let mut p = vec![0.0; h];
            site.step.forward(&embedding, &mut p);
            let a: Vec<f64> = p.iter().map(|&v| leaky(v)).collect();
            let mut q = site.mix.bias.clone();
            for (i, &ai) in a.iter().enumerate() {
                let row = &site.mix.weight[(h + i) * h..(h + i + 1) * h];
                for (qo, &wv) in q.iter_mut().zip(row) {
                    *qo += ai * wv;
                }
            }
            pre[s] = p;
            act[s] = a;
            projected[s] = q;
        }
        Ok(StepTerms {
            embedding,
            pre,
            act,
            projected,
        })
    }
}

struct Pass {
    output: Vec<f64>,
    nearest: Vec<usize>,
    layers: Option<PointLayers>,
}

#[derive(Debug, Clone)]
struct PointLayers {
    width: usize,
    hidden: usize,
    x0: Vec<f64>,
    z: [Vec<f64>; FUSION_SITES],
    f: [Vec<f64>; FUSION_SITES],
}

struct PointSlices<'a> {
    x0: &'a mut [f64],
    z: [&'a mut [f64]; FUSION_SITES],
    f: [&'a mut [f64]; FUSION_SITES],
}

struct ChunkSlices<'a> {
    width: usize,
    hidden: usize,
    x0: &'a mut [f64],
    z: [&'a mut [f64]; FUSION_SITES],
    f: [&'a mut [f64]; FUSION_SITES],
}

impl<'a> ChunkSlices<'a> {
    fn point(&mut self, k: usize) -> PointSlices<'_> {
        let (w, h) = (self.width, self.hidden);
        let [z0, z1, z2] = &mut self.z;
        let [f0, f1, f2] = &mut self.f;
        PointSlices {
            x0: &mut self.x0[k * w..(k + 1) * w],
            z: [
                &mut z0[k * h..(k + 1) * h],
                &mut z1[k * h..(k + 1) * h],
                &mut z2[k * h..(k + 1) * h],
            ],
            f: [
                &mut f0[k * h..(k + 1) * h],
                &mut f1[k * h..(k + 1) * h],
                &mut f2[k * h..(k + 1) * h],
            ],
        }
    }
}

impl PointLayers {
    fn new(n: usize, width: usize, hidden: usize) -> Self {
        PointLayers {
            width,
            hidden,
            x0: vec![0.0; n * width],
            z: std::array::from_fn(|_| vec![0.0; n * hidden]),
            f: std::array::from_fn(|_| vec![0.0; n * hidden]),
        }
    }

    fn chunks(&mut self, chunk: usize) -> Vec<ChunkSlices<'_>> {
        let (w, h) = (self.width, self.hidden);
        let [z0, z1, z2] = &mut self.z;
        let [f0, f1, f2] = &mut self.f;
        self.x0
            .chunks_mut(chunk * w)
            .zip(z0.chunks_mut(chunk * h))
            .zip(z1.chunks_mut(chunk * h))
            .zip(z2.chunks_mut(chunk * h))
            .zip(f0.chunks_mut(chunk * h))
            .zip(f1.chunks_mut(chunk * h))
            .zip(f2.chunks_mut(chunk * h))
            .map(|((((((x0, z0), z1), z2), f0), f1), f2)| ChunkSlices {
                width: w,
                hidden: h,
                x0,
                z: [z0, z1, z2],
                f: [f0, f1, f2],
            })
            .collect()
    }
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    shape: DenoiserShape,
    encoding: ConditionEncoding,
    step: StepTerms,
    nearest: Vec<usize>,
    layers: PointLayers,
}

impl ForwardRecord {
    /// Condition point each noisy point was aligned with.
    pub fn nearest(&self) -> &[usize] {
        &self.nearest
    }

    /// Sign pattern of every pre-activation in the pass; two passes with the
    /// same pattern lie on the same linear piece of the network.
    pub fn activation_signs(&self) -> Vec<bool> {
        let mut out = Vec::new();
        let enc = &self.encoding;
        out.extend(enc.pre1.iter().chain(&enc.pre2).map(|&x| x > 0.0));
        for s in 0..FUSION_SITES {
            out.extend(enc.site_pre[s].iter().map(|&x| x > 0.0));
            out.extend(self.step.pre[s].iter().map(|&x| x > 0.0));
        }
        for s in 0..FUSION_SITES {
            out.extend(self.layers.z[s].iter().map(|&x| x > 0.0));
        }
        out.extend(self.nearest.iter().map(|&j| j % 2 == 0));
        out
    }
}

/// Output of [`DenoiserParams::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: DenoiserParams,
    /// Gradient with respect to the noisy `3 + C` channels of each point.
    pub inputs: Vec<f64>,
}

/// Borrowing adapter that lets trained parameters drive the reverse chain,
/// caching the condition encoding across steps.
pub struct ConditionedDenoiser<'a> {
    params: &'a DenoiserParams,
    encoding: ConditionEncoding,
}

impl<'a> ConditionedDenoiser<'a> {
    pub fn new(params: &'a DenoiserParams, condition: &SemanticCloud) -> Result<Self> {
        Ok(ConditionedDenoiser {
            params,
            encoding: encode_condition(condition, params)?,
        })
    }
}

impl Denoiser for ConditionedDenoiser<'_> {
    fn predict(&mut self, noisy: &NoisyCloud, _condition: &SemanticCloud, t: usize) -> Result<Vec<f64>> {
        self.params.predict_with(&self.encoding, noisy, t)
    }
}

impl Denoiser for DenoiserParams {
    fn predict(&mut self, noisy: &NoisyCloud, condition: &SemanticCloud, t: usize) -> Result<Vec<f64>> {
        self.predict_noise(noisy, condition, t)
    }
}
