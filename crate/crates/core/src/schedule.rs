//! Noise schedules: per-step noise factors `beta_t`, `alpha_t = 1 - beta_t`
//! and their cumulative products `alpha_bar_t`.
//!
//! Steps are numbered `1..=T`; `alpha_bar_0 = 1` by convention. Cumulative
//! products are accumulated in double-double arithmetic so that `alpha_bar_T`
//! for `T = 1000` is correctly rounded rather than carrying a thousand
//! rounding errors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default logistic sharpness for [`ScheduleKind::Sigmoid`].
pub const DEFAULT_SIGMOID_SHARPNESS: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    /// `literal = true` evaluates `beta0 + (1 + cos(pi t / T)) / 2 * (betaT - beta0)`,
    /// which runs from `betaT` down to `beta0`. The default flips the sign of
    /// the cosine so the noise grows with `t`.
    Cosine { literal: bool },
    Sigmoid { sharpness: f64 },
    /// Built from an explicit beta table.
    Custom,
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine { literal: false } => "cosine",
            ScheduleKind::Cosine { literal: true } => "cosine-literal",
            ScheduleKind::Sigmoid { .. } => "sigmoid",
            ScheduleKind::Custom => "custom",
        }
    }

    /// Evaluates the schedule formula at `t` in `[0, steps]`.
    pub fn beta_at(&self, beta0: f64, beta_t: f64, steps: usize, t: f64) -> f64 {
        let frac = t / steps as f64;
        let span = beta_t - beta0;
        match *self {
            ScheduleKind::Linear => beta0 + frac * span,
            // cos(pi f) written as -sin(pi (f - 1/2)) so the midpoint is exact
            ScheduleKind::Cosine { literal: true } => {
                beta0 + (0.5 - 0.5 * ((frac - 0.5) * PI).sin()) * span
            }
            ScheduleKind::Cosine { literal: false } => {
                beta0 + (0.5 + 0.5 * ((frac - 0.5) * PI).sin()) * span
            }
            ScheduleKind::Sigmoid { sharpness } => {
                let lo = logistic(-sharpness);
                let hi = logistic(sharpness);
                let s = logistic(sharpness * (2.0 * frac - 1.0));
                beta0 + (s - lo) / (hi - lo) * span
            }
            ScheduleKind::Custom => f64::NAN,
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    // alpha_bars[t] for t in 0..=T, alpha_bars[0] = 1
    alpha_bars: Vec<f64>,
    complements: Vec<f64>,
}

impl NoiseSchedule {
    pub fn make_linear(beta0: f64, beta_t: f64, steps: usize) -> Result<Self> {
        Self::from_kind(ScheduleKind::Linear, beta0, beta_t, steps)
    }

    pub fn make_cosine(beta0: f64, beta_t: f64, steps: usize, literal: bool) -> Result<Self> {
        Self::from_kind(ScheduleKind::Cosine { literal }, beta0, beta_t, steps)
    }

    pub fn make_sigmoid(beta0: f64, beta_t: f64, steps: usize, sharpness: f64) -> Result<Self> {
        if !(sharpness > 0.0) || !sharpness.is_finite() {
            return Err(Error::invalid(format!(
                "sigmoid sharpness must be positive, got {sharpness}"
            )));
        }
        Self::from_kind(ScheduleKind::Sigmoid { sharpness }, beta0, beta_t, steps)
    }

    pub fn from_kind(kind: ScheduleKind, beta0: f64, beta_t: f64, steps: usize) -> Result<Self> {
        if kind == ScheduleKind::Custom {
            return Err(Error::invalid("custom schedules are built with from_betas"));
        }
        if !(0.0 < beta0 && beta0 < beta_t && beta_t < 1.0) {
            return Err(Error::invalid(format!(
                "schedule endpoints must satisfy 0 < beta0 < betaT < 1, got beta0={beta0}, betaT={beta_t}"
            )));
        }
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        let betas = (1..=steps)
            .map(|t| kind.beta_at(beta0, beta_t, steps, t as f64))
            .collect();
        Self::build(kind, betas)
    }

    /// Schedule from an explicit `beta_1..beta_T` table.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        Self::build(ScheduleKind::Custom, betas)
    }

    fn build(kind: ScheduleKind, betas: Vec<f64>) -> Result<Self> {
        if let Some((t, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, &b)| !(b > 0.0 && b < 1.0))
        {
            return Err(Error::invalid(format!(
                "beta_{} = {b} is outside (0, 1)",
                t + 1
            )));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        let mut complements = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        complements.push(0.0);
        let mut acc = DoubleDouble::ONE;
        // 1 - alpha_bar_t = (1 - alpha_bar_{t-1}) + beta_t * alpha_bar_{t-1}
        // sums positive terms, so it stays accurate where 1 - alpha_bar is tiny.
        let mut comp = DoubleDouble::ZERO;
        for (&a, &b) in alphas.iter().zip(&betas) {
            comp = comp.add(acc.mul_f64(b));
            acc = acc.mul_f64(a);
            alpha_bars.push(acc.to_f64());
            complements.push(comp.to_f64());
        }
        Ok(NoiseSchedule {
            kind,
            betas,
            alphas,
            alpha_bars,
            complements,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// `alpha_bar_t` for `t` in `0..=T`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars.get(t).copied().ok_or_else(|| {
            Error::invalid(format!("step {t} outside [0, {}]", self.steps()))
        })
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    /// `1 - alpha_bar_t` for `t` in `0..=T`, without the cancellation of
    /// subtracting a rounded `alpha_bar_t` from one.
    pub fn one_minus_alpha_bar(&self, t: usize) -> Result<f64> {
        self.complements.get(t).copied().ok_or_else(|| {
            Error::invalid(format!("step {t} outside [0, {}]", self.steps()))
        })
    }

    pub(crate) fn check_step(&self, t: usize, min: usize) -> Result<()> {
        if t < min || t > self.steps() {
            Err(Error::invalid(format!(
                "step {t} outside [{min}, {}]",
                self.steps()
            )))
        } else {
            Ok(())
        }
    }
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy)]
struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    const ONE: DoubleDouble = DoubleDouble { hi: 1.0, lo: 0.0 };
    const ZERO: DoubleDouble = DoubleDouble { hi: 0.0, lo: 0.0 };

    fn add(self, b: DoubleDouble) -> Self {
        let s = self.hi + b.hi;
        let v = s - self.hi;
        let err = (self.hi - (s - v)) + (b.hi - v) + self.lo + b.lo;
        let hi = s + err;
        DoubleDouble { hi, lo: err - (hi - s) }
    }

    fn mul_f64(self, b: f64) -> Self {
        let p = self.hi * b;
        let err = self.hi.mul_add(b, -p) + self.lo * b;
        let hi = p + err;
        let lo = err - (hi - p);
        DoubleDouble { hi, lo }
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}
