//! Noise-prediction objective with a global statistics regularizer, and the
//! training loop around it.
//!
//! The total loss for one scene is
//!
//! ```text
//! L = L2 + lambda * (mu^2 + (sigma - 1)^2)
//! ```
//!
//! where `L2` is the mean squared error between true and predicted noise and
//! `mu`, `sigma` are the mean and population standard deviation of the
//! predicted noise after dividing each channel by its [`NoiseScales`] entry.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::dataset::SceneSample;
use crate::denoiser::DenoiserParams;
use crate::diffusion::{forward_diffuse, NoiseScales, NoiseSource};
use crate::error::{Error, Result};
use crate::geom::SemanticCloud;
use crate::nn::{OptimizerState, ParamSet};
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;

pub const DEFAULT_LAMBDA: f64 = 5.0;
pub const DEFAULT_LEARNING_RATE: f64 = 1e-3;
pub const LOSS_CSV_HEADER: &str = "epoch,step,l2,mean_term,var_term,total";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub l2: f64,
    pub mean_term: f64,
    pub var_term: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(l2: f64, mean_term: f64, var_term: f64, lambda: f64) -> Self {
        LossBreakdown {
            l2,
            mean_term,
            var_term,
            total: l2 + lambda * (mean_term + var_term),
            lambda,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.l2.is_finite() && self.mean_term.is_finite() && self.var_term.is_finite() && self.total.is_finite()
    }
}

/// Mean squared error over every channel of every point.
pub fn diffusion_loss(true_noise: &[f64], predicted: &[f64]) -> Result<f64> {
    Error::check_len("predicted noise", true_noise.len(), predicted.len())?;
    if true_noise.is_empty() {
        return Err(Error::EmptyCloud("diffusion loss"));
    }
    let sum: f64 = true_noise
        .iter()
        .zip(predicted)
        .map(|(e, p)| (p - e) * (p - e))
        .sum();
    Ok(sum / true_noise.len() as f64)
}

/// `(mu^2, (sigma - 1)^2)` of the standardized prediction. `width` is the
/// per-point channel count `3 + C`.
pub fn regularization_loss(predicted: &[f64], width: usize, scales: &NoiseScales) -> Result<(f64, f64)> {
    let (mu, sigma) = standardized_moments(predicted, width, scales)?;
    Ok((mu * mu, (sigma - 1.0) * (sigma - 1.0)))
}

fn standardized_moments(predicted: &[f64], width: usize, scales: &NoiseScales) -> Result<(f64, f64)> {
    if predicted.is_empty() {
        return Err(Error::EmptyCloud("regularization loss"));
    }
    if width < 4 || !predicted.len().is_multiple_of(width) {
        return Err(Error::invalid(format!(
            "prediction length {} is not a multiple of point width {width}",
            predicted.len()
        )));
    }
    let k = predicted.len() as f64;
    let u = |idx: usize| predicted[idx] / scales.for_channel(idx % width);
    let mu = (0..predicted.len()).map(u).sum::<f64>() / k;
    let var = (0..predicted.len()).map(|i| (u(i) - mu) * (u(i) - mu)).sum::<f64>() / k;
    Ok((mu, var.sqrt()))
}

/// Loss breakdown and its gradient with respect to the prediction.
pub fn loss_with_gradient(
    true_noise: &[f64],
    predicted: &[f64],
    width: usize,
    scales: &NoiseScales,
    lambda: f64,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let l2 = diffusion_loss(true_noise, predicted)?;
    let (mu, sigma) = standardized_moments(predicted, width, scales)?;
    let breakdown = LossBreakdown::new(l2, mu * mu, (sigma - 1.0) * (sigma - 1.0), lambda);
    let k = predicted.len() as f64;
    // d sigma / d u_i = (u_i - mu) / (K sigma); taken as 0 at sigma = 0
    let var_coeff = if sigma > 0.0 {
        2.0 * (sigma - 1.0) / (k * sigma)
    } else {
        0.0
    };
    let grad = predicted
        .iter()
        .zip(true_noise)
        .enumerate()
        .map(|(i, (&p, &e))| {
            let s = scales.for_channel(i % width);
            let u = p / s;
            let reg = 2.0 * mu / k + var_coeff * (u - mu);
            2.0 * (p - e) / k + lambda * reg / s
        })
        .collect();
    Ok((breakdown, grad))
}

/// Loss and parameter gradients for one `(condition, clean, t, noise)` draw,
/// without touching the optimizer.
#[allow(clippy::too_many_arguments)]
pub fn compute_gradients(
    params: &DenoiserParams,
    condition: &SemanticCloud,
    clean: &SemanticCloud,
    t: usize,
    schedule: &NoiseSchedule,
    scales: &NoiseScales,
    lambda: f64,
    source: &NoiseSource,
) -> Result<(LossBreakdown, DenoiserParams)> {
    let (noisy, noise) = forward_diffuse(clean, t, schedule, scales, source)?;
    let (pred, record) = params.forward(&noisy, condition, t)?;
    let (breakdown, grad_pred) = loss_with_gradient(&noise, &pred, noisy.width(), scales, lambda)?;
    let grads = params.backward(&record, &grad_pred)?;
    Ok((breakdown, grads.params))
}

/// Fixed hyperparameters of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSettings {
    pub scales: NoiseScales,
    pub lambda: f64,
    pub learning_rate: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            scales: NoiseScales::default(),
            lambda: DEFAULT_LAMBDA,
            learning_rate: DEFAULT_LEARNING_RATE,
        }
    }
}

/// One optimizer update on `scene`. `iteration` keys the random draws, so a
/// run is reproducible from `(stream, iteration)` alone.
#[allow(clippy::too_many_arguments)]
pub fn training_step(
    scene: &SceneSample,
    params: &mut DenoiserParams,
    opt: &mut OptimizerState,
    schedule: &NoiseSchedule,
    scales: &NoiseScales,
    lambda: f64,
    stream: &RngStream,
    iteration: u64,
) -> Result<LossBreakdown> {
    if scene.partial.is_empty() || scene.gt.is_empty() {
        return Err(Error::EmptyCloud("training scene"));
    }
    let t = stream
        .derive("step")
        .rng(iteration, 0)
        .random_range(1..=schedule.steps());
    let source = NoiseSource::Seeded(stream.derive("noise").derive_index(iteration));
    let (breakdown, grads) =
        compute_gradients(params, &scene.partial, &scene.gt, t, schedule, scales, lambda, &source)?;
    if !breakdown.is_finite() {
        return Ok(breakdown);
    }
    opt.update(params, &grads)?;
    Ok(breakdown)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: DenoiserParams,
    pub history: Vec<LossRecord>,
}

impl TrainOutcome {
    /// Mean `L2` over the records of the last epoch.
    pub fn final_l2(&self) -> Option<f64> {
        let last = self.history.last()?.epoch;
        let tail: Vec<f64> = self
            .history
            .iter()
            .filter(|r| r.epoch == last)
            .map(|r| r.loss.l2)
            .collect();
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// Where [`train`] writes its artifacts. Both are optional.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Directory receiving `epoch_NNN.ckpt` after every epoch.
    pub checkpoint_dir: Option<PathBuf>,
    /// Loss history, one row per step.
    pub loss_csv: Option<PathBuf>,
}

/// Runs `epochs` passes over `dataset` in a fresh shuffled order per epoch.
/// Fails with [`Error::Numerical`] naming the step on the first non-finite loss.
pub fn train(
    dataset: &[SceneSample],
    init: DenoiserParams,
    schedule: &NoiseSchedule,
    settings: &TrainSettings,
    epochs: usize,
    seed: u64,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::invalid("training needs at least one scene"));
    }
    if let Some(dir) = &outputs.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut csv = match &outputs.loss_csv {
        Some(path) => Some(LossCsv::create(path)?),
        None => None,
    };
    let stream = RngStream::new(seed).derive("train");
    let mut params = init;
    let mut opt = OptimizerState::for_params(&params, settings.learning_rate);
    let mut history = Vec::with_capacity(epochs * dataset.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut iteration = 0u64;
    for epoch in 0..epochs {
        order.sort_unstable();
        order.shuffle(&mut stream.derive("shuffle").rng(epoch as u64, 0));
        for (step, &scene) in order.iter().enumerate() {
            let loss = training_step(
                &dataset[scene],
                &mut params,
                &mut opt,
                schedule,
                &settings.scales,
                settings.lambda,
                &stream,
                iteration,
            )?;
            iteration += 1;
            let record = LossRecord { epoch, step, loss };
            if let Some(csv) = csv.as_mut() {
                csv.row(&record)?;
            }
            if !loss.is_finite() || !params.is_finite() {
                if let Some(csv) = csv.as_mut() {
                    csv.flush()?;
                }
                return Err(Error::Numerical(format!(
                    "non-finite loss at epoch {epoch}, step {step} (iteration {})",
                    iteration - 1
                )));
            }
            history.push(record);
        }
        if let Some(csv) = csv.as_mut() {
            csv.flush()?;
        }
        if let Some(dir) = &outputs.checkpoint_dir {
            params.save(&dir.join(format!("epoch_{epoch:03}.ckpt")))?;
        }
    }
    Ok(TrainOutcome { params, history })
}

pub(crate) struct LossCsv {
    path: PathBuf,
    out: BufWriter<File>,
}

impl LossCsv {
    pub(crate) fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut csv = LossCsv {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        writeln!(csv.out, "{LOSS_CSV_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(csv)
    }

    pub(crate) fn row(&mut self, r: &LossRecord) -> Result<()> {
        let l = &r.loss;
        writeln!(
            self.out,
            "{},{},{},{},{},{}",
            r.epoch, r.step, l.l2, l.mean_term, l.var_term, l.total
        )
        .map_err(|e| Error::io(&self.path, e))
    }

    pub(crate) fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}
