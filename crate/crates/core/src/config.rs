//! Run configuration: a flat TOML table. Every key is optional and falls back
//! to the defaults below; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::denoiser::{DenoiserShape, DEFAULT_EMBED_DIM, DEFAULT_HIDDEN};
use crate::diffusion::{NoiseScales, VarianceMode};
use crate::error::{Error, Result};
use crate::evaluation::EvalVolume;
use crate::refinement::RefinerSettings;
use crate::schedule::{NoiseSchedule, ScheduleKind, DEFAULT_SIGMOID_SHARPNESS};
use crate::training::{TrainSettings, DEFAULT_LAMBDA, DEFAULT_LEARNING_RATE};

/// Schedule family as written in the config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleName {
    Linear,
    Cosine,
    CosineLiteral,
    Sigmoid,
}

impl ScheduleName {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "linear" => Some(ScheduleName::Linear),
            "cosine" => Some(ScheduleName::Cosine),
            "cosine-literal" => Some(ScheduleName::CosineLiteral),
            "sigmoid" => Some(ScheduleName::Sigmoid),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ScheduleName::Linear => "linear",
            ScheduleName::Cosine => "cosine",
            ScheduleName::CosineLiteral => "cosine-literal",
            ScheduleName::Sigmoid => "sigmoid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schedule: ScheduleName,
    pub beta0: f64,
    pub beta_t: f64,
    pub steps: usize,
    pub sigmoid_sharpness: f64,
    pub variance_mode: VarianceMode,
    pub position_scale: f64,
    pub semantic_scale: f64,
    pub duplication: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub refine: bool,
    pub refiner_offsets: usize,
    pub refiner_hidden: usize,
    pub refiner_epochs: usize,
    pub seed: u64,
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub eval_min: [f64; 3],
    pub eval_max: [f64; 3],
    pub voxel_size: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let refiner = RefinerSettings::default();
        RunConfig {
            schedule: ScheduleName::Cosine,
            beta0: 3.5e-5,
            beta_t: 0.007,
            steps: 1000,
            sigmoid_sharpness: DEFAULT_SIGMOID_SHARPNESS,
            variance_mode: VarianceMode::Standard,
            position_scale: 1.0,
            semantic_scale: 0.1,
            duplication: 4,
            lambda: DEFAULT_LAMBDA,
            learning_rate: DEFAULT_LEARNING_RATE,
            hidden: DEFAULT_HIDDEN,
            embed_dim: DEFAULT_EMBED_DIM,
            epochs: 20,
            refine: true,
            refiner_offsets: refiner.offsets,
            refiner_hidden: refiner.hidden,
            refiner_epochs: refiner.epochs,
            seed: 0,
            train_dir: None,
            val_dir: None,
            eval_min: SYNTH_EVAL_MIN,
            eval_max: SYNTH_EVAL_MAX,
            voxel_size: SYNTH_VOXEL_SIZE,
        }
    }
}

/// Evaluation volume matching the synthetic street scenes.
pub const SYNTH_EVAL_MIN: [f64; 3] = [-10.0, -10.0, -2.0];
pub const SYNTH_EVAL_MAX: [f64; 3] = [10.0, 10.0, 4.0];
pub const SYNTH_VOXEL_SIZE: f64 = 0.5;

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg = Self::parse_toml(text, origin)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without range checks, for callers that override fields before
    /// calling [`RunConfig::validate`].
    pub fn parse_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| text[s].trim().to_string()).unwrap_or_default();
            Error::Config {
                field: if field.is_empty() { origin.display().to_string() } else { field },
                message: e.message().to_string(),
            }
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::load_unchecked(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_unchecked(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Checks every field against the constraints of the module it feeds.
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if !(self.beta0 > 0.0 && self.beta0 < 1.0) {
            return Err(Error::config("beta0", format!("{} is outside (0, 1)", self.beta0)));
        }
        if !(self.beta_t > 0.0 && self.beta_t < 1.0) {
            return Err(Error::config("beta_t", format!("{} is outside (0, 1)", self.beta_t)));
        }
        if !(self.sigmoid_sharpness > 0.0) {
            return Err(Error::config("sigmoid_sharpness", "must be positive"));
        }
        self.schedule()
            .map_err(|e| Error::config("schedule", e.to_string()))?;
        self.scales()?;
        if self.duplication == 0 {
            return Err(Error::config("duplication", "must be at least 1"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be finite and non-negative"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be finite and positive"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden", "must be at least 1"));
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::config("embed_dim", "must be a positive even number"));
        }
        if self.refiner_offsets == 0 {
            return Err(Error::config("refiner_offsets", "must be at least 1"));
        }
        if self.refiner_hidden == 0 {
            return Err(Error::config("refiner_hidden", "must be at least 1"));
        }
        self.eval_volume()?;
        Ok(())
    }

    pub fn schedule_kind(&self) -> ScheduleKind {
        match self.schedule {
            ScheduleName::Linear => ScheduleKind::Linear,
            ScheduleName::Cosine => ScheduleKind::Cosine { literal: false },
            ScheduleName::CosineLiteral => ScheduleKind::Cosine { literal: true },
            ScheduleName::Sigmoid => ScheduleKind::Sigmoid {
                sharpness: self.sigmoid_sharpness,
            },
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::from_kind(self.schedule_kind(), self.beta0, self.beta_t, self.steps)
    }

    pub fn scales(&self) -> Result<NoiseScales> {
        NoiseScales::new(self.position_scale, self.semantic_scale).map_err(|_| {
            Error::config(
                if self.position_scale > 0.0 { "semantic_scale" } else { "position_scale" },
                "noise scales must be finite and positive",
            )
        })
    }

    pub fn denoiser_shape(&self, class_count: usize) -> Result<DenoiserShape> {
        DenoiserShape::new(class_count, self.hidden, self.embed_dim)
    }

    pub fn train_settings(&self) -> Result<TrainSettings> {
        Ok(TrainSettings {
            scales: self.scales()?,
            lambda: self.lambda,
            learning_rate: self.learning_rate,
        })
    }

    pub fn refiner_settings(&self) -> RefinerSettings {
        RefinerSettings {
            offsets: self.refiner_offsets,
            hidden: self.refiner_hidden,
            epochs: self.refiner_epochs,
            learning_rate: self.learning_rate,
        }
    }

    pub fn eval_volume(&self) -> Result<EvalVolume> {
        EvalVolume::new(self.eval_min, self.eval_max, self.voxel_size)
            .map_err(|e| Error::config("eval_min/eval_max/voxel_size", e.to_string()))
    }
}
