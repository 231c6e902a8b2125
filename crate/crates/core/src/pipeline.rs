//! End-to-end completion, the copy baseline, and the train/evaluate loop
//! behind parameter sweeps.

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::config::{RunConfig, ScheduleName};
use crate::dataset::{read_scene, SceneSample};
use crate::denoiser::{ConditionedDenoiser, DenoiserParams};
use crate::diffusion::{denoise_chain, init_from_partial, NoiseScales, NoiseSource, VarianceMode};
use crate::error::{Error, Result};
use crate::evaluation::{build_unknown_mask, evaluate, exclude_occupied, EvalReport, EvalVolume};
use crate::geom::{SemanticCloud, VoxelGrid};
use crate::refinement::{refine, train_refiner, RefinerParams};
use crate::rng::RngStream;
use crate::schedule::NoiseSchedule;
use crate::training::{train, TrainOutcome, TrainOutputs};

pub const SCENE_EXTENSION: &str = "scene";

pub fn scene_file_name(index: usize) -> String {
    format!("scene_{index:05}.{SCENE_EXTENSION}")
}

/// Scene files of `dir` in name order.
pub fn list_scenes(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e == SCENE_EXTENSION) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn load_scenes(dir: &Path) -> Result<Vec<SceneSample>> {
    list_scenes(dir)?.iter().map(|p| read_scene(p)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSettings {
    pub schedule: NoiseSchedule,
    pub scales: NoiseScales,
    pub duplication: usize,
    pub mode: VarianceMode,
}

impl SamplingSettings {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        Ok(SamplingSettings {
            schedule: cfg.schedule()?,
            scales: cfg.scales()?,
            duplication: cfg.duplication,
            mode: cfg.variance_mode,
        })
    }
}

/// Intermediate and final clouds of one completion.
#[derive(Debug, Clone)]
pub struct Completion {
    pub input_count: usize,
    pub chain_count: usize,
    pub completed: SemanticCloud,
    pub refined: Option<SemanticCloud>,
}

impl Completion {
    pub fn output(&self) -> &SemanticCloud {
        self.refined.as_ref().unwrap_or(&self.completed)
    }
}

/// Duplicates `partial`, runs the reverse chain conditioned on it and
/// optionally refines the result.
pub fn complete(
    partial: &SemanticCloud,
    params: &DenoiserParams,
    settings: &SamplingSettings,
    refiner: Option<&RefinerParams>,
    stream: &RngStream,
) -> Result<Completion> {
    complete_with(partial, params, settings, refiner, stream, false)
}

fn complete_with(
    partial: &SemanticCloud,
    params: &DenoiserParams,
    settings: &SamplingSettings,
    refiner: Option<&RefinerParams>,
    stream: &RngStream,
    zero_noise: bool,
) -> Result<Completion> {
    let source = |purpose: &str| {
        if zero_noise {
            NoiseSource::Zero
        } else {
            NoiseSource::Seeded(stream.derive(purpose))
        }
    };
    let init = init_from_partial(partial, settings.duplication, &settings.schedule, &settings.scales, &source("init"))?;
    let mut denoiser = ConditionedDenoiser::new(params, partial)?;
    let completed = denoise_chain(
        &init,
        partial,
        &mut denoiser,
        &settings.schedule,
        &settings.scales,
        settings.mode,
        &source("reverse"),
    )?;
    let refined = refiner.map(|r| refine(&completed, r)).transpose()?;
    Ok(Completion {
        input_count: partial.len(),
        chain_count: init.len(),
        completed,
        refined,
    })
}

/// [`complete`] with every noise draw set to zero. With a zero-weight
/// denoiser this returns the duplicated input unchanged.
pub fn complete_noiseless(
    partial: &SemanticCloud,
    params: &DenoiserParams,
    settings: &SamplingSettings,
    refiner: Option<&RefinerParams>,
) -> Result<Completion> {
    complete_with(partial, params, settings, refiner, &RngStream::new(0), true)
}

/// The copy baseline: every input point repeated `duplication` times.
pub fn duplicate(partial: &SemanticCloud, duplication: usize) -> SemanticCloud {
    let idx: Vec<usize> = (0..partial.len()).flat_map(|i| std::iter::repeat_n(i, duplication)).collect();
    let semantics = idx.iter().flat_map(|&i| partial.semantics_of(i).iter().copied()).collect();
    SemanticCloud::new(
        partial.class_count(),
        idx.iter().map(|&i| partial.positions()[i]).collect(),
        semantics,
    )
    .expect("copies of a valid cloud are valid")
}

/// Which cells of the volume count in an evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// Every cell observed by some ray.
    Known,
    /// Observed cells that hold no point of the partial scan.
    Occluded,
}

pub fn region_mask(scene: &SceneSample, volume: &EvalVolume, region: Region) -> VoxelGrid {
    let known = build_unknown_mask(&scene.rays, volume);
    match region {
        Region::Known => known,
        Region::Occluded => exclude_occupied(&known, &volume.clip(&scene.partial)),
    }
}

pub fn evaluate_scene(pred: &SemanticCloud, scene: &SceneSample, volume: &EvalVolume, region: Region) -> Result<EvalReport> {
    evaluate(pred, &scene.gt, &region_mask(scene, volume, region), volume)
}

/// Trained denoiser plus an optional refiner.
#[derive(Debug, Clone)]
pub struct Model {
    pub denoiser: DenoiserParams,
    pub refiner: Option<RefinerParams>,
}

/// Per-scene completion stream used by [`fit`] and [`score`]; scene `i` of a
/// set always sees the same noise.
pub fn scene_stream(seed: u64, purpose: &str, index: usize) -> RngStream {
    RngStream::new(seed).derive(purpose).derive_index(index as u64)
}

/// Trains the denoiser on `scenes` and, when `cfg.refine` is set, a refiner
/// on the denoiser's own completions of the same scenes.
pub fn fit(scenes: &[SceneSample], cfg: &RunConfig, outputs: &TrainOutputs) -> Result<(Model, TrainOutcome)> {
    cfg.validate()?;
    let first = scenes.first().ok_or_else(|| Error::invalid("training needs at least one scene"))?;
    let shape = cfg.denoiser_shape(first.class_count())?;
    let init = DenoiserParams::init(shape, cfg.seed);
    let outcome = train(scenes, init, &cfg.schedule()?, &cfg.train_settings()?, cfg.epochs, cfg.seed, outputs)?;
    let refiner = if cfg.refine {
        let settings = SamplingSettings::from_config(cfg)?;
        let mut pairs = Vec::with_capacity(scenes.len());
        for (i, s) in scenes.iter().enumerate() {
            let c = complete(&s.partial, &outcome.params, &settings, None, &scene_stream(cfg.seed, "fit", i))?;
            pairs.push((c.completed, s.gt.clone()));
        }
        Some(train_refiner(&pairs, &cfg.refiner_settings(), cfg.seed)?.0)
    } else {
        None
    };
    let model = Model {
        denoiser: outcome.params.clone(),
        refiner,
    };
    Ok((model, outcome))
}

/// Pools the evaluation of `predict` over `scenes`.
pub fn score(
    scenes: &[SceneSample],
    volume: &EvalVolume,
    region: Region,
    mut predict: impl FnMut(usize, &SceneSample) -> Result<SemanticCloud>,
) -> Result<EvalReport> {
    let reports = scenes
        .iter()
        .enumerate()
        .map(|(i, s)| evaluate_scene(&predict(i, s)?, s, volume, region))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::pooled(&reports)
}

/// Completes every validation scene with `model` and pools the result.
pub fn score_model(model: &Model, scenes: &[SceneSample], cfg: &RunConfig, region: Region) -> Result<EvalReport> {
    let settings = SamplingSettings::from_config(cfg)?;
    score(scenes, &cfg.eval_volume()?, region, |i, s| {
        let c = complete(&s.partial, &model.denoiser, &settings, model.refiner.as_ref(), &scene_stream(cfg.seed, "eval", i))?;
        Ok(c.output().clone())
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Schedule,
    Lambda,
}

impl SweepAxis {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "schedule" => Some(SweepAxis::Schedule),
            "lambda" => Some(SweepAxis::Lambda),
            _ => None,
        }
    }

    /// `base` with the axis set to `value`, validated.
    pub fn apply(&self, base: &RunConfig, value: &str) -> Result<RunConfig> {
        let mut cfg = base.clone();
        match self {
            SweepAxis::Schedule => {
                cfg.schedule = ScheduleName::parse(value)
                    .ok_or_else(|| Error::config("schedule", format!("unknown schedule '{value}'")))?;
            }
            SweepAxis::Lambda => {
                cfg.lambda = value
                    .parse()
                    .map_err(|_| Error::config("lambda", format!("'{value}' is not a number")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub iou_sc: f64,
    pub miou_ssc: f64,
    pub final_l2: f64,
}

pub const SWEEP_CSV_HEADER: &str = "value,iou_sc,miou_ssc,final_l2";

/// Trains and evaluates one model per value, all from the same seed.
/// Every value is validated before any training starts.
pub fn sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    train_set: &[SceneSample],
    val_set: &[SceneSample],
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::invalid("sweep needs at least one value"));
    }
    if val_set.is_empty() {
        return Err(Error::invalid("sweep needs at least one validation scene"));
    }
    let configs = values.iter().map(|v| axis.apply(base, v)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(values.len());
    for (value, cfg) in values.iter().zip(&configs) {
        let (model, outcome) = fit(train_set, cfg, &TrainOutputs::default())?;
        let report = score_model(&model, val_set, cfg, Region::Known)?;
        let row = SweepRow {
            value: value.clone(),
            iou_sc: report.iou_sc,
            miou_ssc: report.miou_ssc,
            final_l2: outcome.final_l2().unwrap_or(f64::NAN),
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", r.value, r.iou_sc, r.miou_ssc, r.final_l2)?;
    }
    Ok(())
}
