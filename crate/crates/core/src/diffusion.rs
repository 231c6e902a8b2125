//! Local point diffusion.
//!
//! Each point carries `3 + C` channels (position, then semantics). The
//! forward process adds `sqrt(1 - alpha_bar_t) * eps` to every channel of
//! every point independently; the reverse step removes predicted noise one
//! step at a time. Semantic channels live in unconstrained `R^C` while noisy
//! and are only projected back onto the simplex by [`denoise_chain`].

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{project_to_simplex, SemanticCloud, SimplexMode};
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;

/// Standard deviations of the position and semantic noise channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseScales {
    position: f64,
    semantic: f64,
}

impl NoiseScales {
    pub fn new(position: f64, semantic: f64) -> Result<Self> {
        if !(position > 0.0 && position.is_finite()) || !(semantic > 0.0 && semantic.is_finite()) {
            return Err(Error::invalid(format!(
                "noise scales must be positive, got position={position}, semantic={semantic}"
            )));
        }
        Ok(NoiseScales { position, semantic })
    }

    pub fn position(&self) -> f64 {
        self.position
    }

    pub fn semantic(&self) -> f64 {
        self.semantic
    }

    /// Scale applied to channel `ch` of a `3 + C` vector.
    #[inline]
    pub fn for_channel(&self, ch: usize) -> f64 {
        if ch < 3 {
            self.position
        } else {
            self.semantic
        }
    }
}

impl Default for NoiseScales {
    fn default() -> Self {
        NoiseScales {
            position: 1.0,
            semantic: 0.1,
        }
    }
}

/// Where Gaussian variates come from. `Zero` turns every draw into 0, which
/// makes the processes deterministic for testing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseSource {
    Seeded(RngStream),
    Zero,
}

impl NoiseSource {
    pub fn derive(&self, purpose: &str) -> NoiseSource {
        match self {
            NoiseSource::Seeded(s) => NoiseSource::Seeded(s.derive(purpose)),
            NoiseSource::Zero => NoiseSource::Zero,
        }
    }
}

/// Reverse-step variance rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    /// `sigma_t^2 = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t) * beta_t`
    #[default]
    Standard,
    /// `sigma_t^2 = (1 - alpha_bar_{t-1}) / (1 - alpha_t) * beta_t`
    Literal,
}

/// Draws `n_points` offsets of width `3 + class_count`. Variates are keyed by
/// `(step, point index)`; channel `k` is the `k`-th draw of that generator.
pub fn sample_noise(
    n_points: usize,
    class_count: usize,
    scales: &NoiseScales,
    source: &NoiseSource,
    step: u64,
) -> Vec<f64> {
    let width = 3 + class_count;
    let mut out = vec![0.0; n_points * width];
    if let NoiseSource::Seeded(stream) = source {
        out.par_chunks_mut(width)
            .enumerate()
            .for_each(|(i, row)| {
                let mut rng = stream.rng(step, i as u64);
                for (ch, v) in row.iter_mut().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = z * scales.for_channel(ch);
                }
            });
    }
    out
}

/// A clean cloud plus per-point offsets at diffusion step `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyCloud {
    base: SemanticCloud,
    step: usize,
    offsets: Vec<f64>,
}

impl NoisyCloud {
    pub fn new(base: SemanticCloud, step: usize, offsets: Vec<f64>) -> Result<Self> {
        let width = 3 + base.class_count();
        Error::check_len("noisy cloud offsets", base.len() * width, offsets.len())?;
        Ok(NoisyCloud {
            base,
            step,
            offsets,
        })
    }

    pub fn base(&self) -> &SemanticCloud {
        &self.base
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.base.class_count()
    }

    /// Channels per point, `3 + C`.
    pub fn width(&self) -> usize {
        3 + self.base.class_count()
    }

    /// Writes the noisy `3 + C` channels of point `i` into `out`.
    pub fn write_point(&self, i: usize, out: &mut [f64]) {
        let w = self.width();
        let off = &self.offsets[i * w..(i + 1) * w];
        let p = self.base.positions()[i];
        let s = self.base.semantics_of(i);
        for a in 0..3 {
            out[a] = p[a] + off[a];
        }
        for (k, &sk) in s.iter().enumerate() {
            out[3 + k] = sk + off[3 + k];
        }
    }

    pub fn noisy_position(&self, i: usize) -> [f64; 3] {
        let w = self.width();
        let p = self.base.positions()[i];
        std::array::from_fn(|a| p[a] + self.offsets[i * w + a])
    }

    /// Flat `len() * width()` array of noisy values.
    pub fn values(&self) -> Vec<f64> {
        let w = self.width();
        let mut out = vec![0.0; self.len() * w];
        for (i, row) in out.chunks_exact_mut(w).enumerate() {
            self.write_point(i, row);
        }
        out
    }

    /// Noisy positions with semantics projected back onto the simplex.
    pub fn to_cloud(&self) -> Result<SemanticCloud> {
        let c = self.class_count();
        let w = self.width();
        let values = self.values();
        let mut positions = Vec::with_capacity(self.len());
        let mut semantics = Vec::with_capacity(self.len() * c);
        for row in values.chunks_exact(w) {
            if row[..3].iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical("non-finite position in denoised cloud".into()));
            }
            positions.push([row[0], row[1], row[2]]);
            semantics.extend(project_to_simplex(&row[3..], SimplexMode::Euclidean)?);
        }
        Ok(SemanticCloud::from_parts_unchecked(c, positions, semantics))
    }
}

/// Forward diffusion with a given noise draw: offsets become
/// `sqrt(1 - alpha_bar_t) * noise`.
pub fn apply_noise(
    clean: &SemanticCloud,
    t: usize,
    schedule: &NoiseSchedule,
    noise: &[f64],
) -> Result<NoisyCloud> {
    schedule.check_step(t, 0)?;
    let width = 3 + clean.class_count();
    Error::check_len("forward diffusion noise", clean.len() * width, noise.len())?;
    let coef = schedule.one_minus_alpha_bar(t)?.sqrt();
    let offsets = noise.iter().map(|e| coef * e).collect();
    NoisyCloud::new(clean.clone(), t, offsets)
}

/// Samples noise and diffuses `clean` to step `t`. Returns the noisy cloud and
/// the unscaled-by-schedule noise `eps` that was drawn.
pub fn forward_diffuse(
    clean: &SemanticCloud,
    t: usize,
    schedule: &NoiseSchedule,
    scales: &NoiseScales,
    source: &NoiseSource,
) -> Result<(NoisyCloud, Vec<f64>)> {
    schedule.check_step(t, 0)?;
    let noise = sample_noise(clean.len(), clean.class_count(), scales, source, t as u64);
    let noisy = apply_noise(clean, t, schedule, &noise)?;
    Ok((noisy, noise))
}

/// Drift coefficient `(1 - alpha_t) / sqrt(1 - alpha_bar_t)` of the reverse
/// step, evaluated with `beta_t` in place of `1 - alpha_t`.
pub fn drift_coefficient(schedule: &NoiseSchedule, t: usize) -> Result<f64> {
    schedule.check_step(t, 1)?;
    Ok(schedule.beta(t) / schedule.one_minus_alpha_bar(t)?.sqrt())
}

/// Standard deviation of the fresh noise injected by the reverse step; zero
/// on the final step.
pub fn reverse_sigma(schedule: &NoiseSchedule, t: usize, mode: VarianceMode) -> Result<f64> {
    schedule.check_step(t, 1)?;
    if t == 1 {
        return Ok(0.0);
    }
    let prev = schedule.one_minus_alpha_bar(t - 1)?;
    let beta = schedule.beta(t);
    let var = match mode {
        VarianceMode::Standard => prev / schedule.one_minus_alpha_bar(t)? * beta,
        // (1 - alpha_t) is beta_t, so the ratio cancels
        VarianceMode::Literal => prev,
    };
    Ok(var.sqrt())
}

/// One reverse step from `t` to `t - 1`:
/// `y_{t-1} = y_t - drift(t) * eps_theta + sigma_t * z`.
pub fn reverse_step(
    noisy: &NoisyCloud,
    predicted_noise: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    scales: &NoiseScales,
    mode: VarianceMode,
    source: &NoiseSource,
) -> Result<NoisyCloud> {
    schedule.check_step(t, 1)?;
    if noisy.step() != t {
        return Err(Error::invalid(format!(
            "reverse step {t} applied to a cloud at step {}",
            noisy.step()
        )));
    }
    Error::check_len(
        "predicted noise",
        noisy.len() * noisy.width(),
        predicted_noise.len(),
    )?;
    let drift = drift_coefficient(schedule, t)?;
    let sigma = reverse_sigma(schedule, t, mode)?;
    let mut offsets = noisy.offsets.clone();
    for (o, p) in offsets.iter_mut().zip(predicted_noise) {
        *o -= drift * p;
    }
    if sigma > 0.0 {
        let z = sample_noise(noisy.len(), noisy.class_count(), scales, source, t as u64);
        for (o, zi) in offsets.iter_mut().zip(&z) {
            *o += sigma * zi;
        }
    }
    Ok(NoisyCloud {
        base: noisy.base.clone(),
        step: t - 1,
        offsets,
    })
}

/// Replicates every point `duplication` times (copies of a point are
/// adjacent) and diffuses the result to step `T`.
pub fn init_from_partial(
    partial: &SemanticCloud,
    duplication: usize,
    schedule: &NoiseSchedule,
    scales: &NoiseScales,
    source: &NoiseSource,
) -> Result<NoisyCloud> {
    if partial.is_empty() {
        return Err(Error::EmptyCloud("chain initialization"));
    }
    if duplication == 0 {
        return Err(Error::invalid("duplication factor must be at least 1"));
    }
    let c = partial.class_count();
    let mut positions = Vec::with_capacity(partial.len() * duplication);
    let mut semantics = Vec::with_capacity(partial.len() * duplication * c);
    for i in 0..partial.len() {
        for _ in 0..duplication {
            positions.push(partial.positions()[i]);
            semantics.extend_from_slice(partial.semantics_of(i));
        }
    }
    let duplicated = SemanticCloud::from_parts_unchecked(c, positions, semantics);
    let (noisy, _) = forward_diffuse(&duplicated, schedule.steps(), schedule, scales, source)?;
    Ok(noisy)
}

/// Noise predictor called by the reverse chain.
pub trait Denoiser {
    /// Returns `len() * (3 + C)` predicted noise values for `noisy` at step `t`.
    fn predict(
        &mut self,
        noisy: &NoisyCloud,
        condition: &SemanticCloud,
        t: usize,
    ) -> Result<Vec<f64>>;
}

impl<F> Denoiser for F
where
    F: FnMut(&NoisyCloud, &SemanticCloud, usize) -> Result<Vec<f64>>,
{
    fn predict(
        &mut self,
        noisy: &NoisyCloud,
        condition: &SemanticCloud,
        t: usize,
    ) -> Result<Vec<f64>> {
        self(noisy, condition, t)
    }
}

/// Runs the reverse chain from `init.step()` down to 0 and projects the final
/// semantics onto the simplex.
pub fn denoise_chain(
    init: &NoisyCloud,
    condition: &SemanticCloud,
    denoiser: &mut dyn Denoiser,
    schedule: &NoiseSchedule,
    scales: &NoiseScales,
    mode: VarianceMode,
    source: &NoiseSource,
) -> Result<SemanticCloud> {
    schedule.check_step(init.step(), 0)?;
    let mut state = init.clone();
    for t in (1..=init.step()).rev() {
        let predicted = denoiser.predict(&state, condition, t)?;
        if predicted.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical(format!(
                "denoiser produced non-finite noise at step {t}"
            )));
        }
        state = reverse_step(&state, &predicted, t, schedule, scales, mode, source)?;
    }
    state.to_cloud()
}
