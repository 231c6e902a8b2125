//! `point-diffuse`: scene generation, training, sampling, evaluation and
//! sweeps over the synthetic street set.
//!
//! Settings come from the TOML file given with `--config` (defaults when
//! absent); any flag given on the command line overrides the file.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use point_diffuse::config::{RunConfig, ScheduleName};
use point_diffuse::dataset::scene_file::quantize;
use point_diffuse::dataset::{
    export_ply, generate_scene, kitti_learning_map, oracle_segment, read_kitti_scan, read_ply, read_scene,
    write_scene, ColorMap, SynthConfig,
};
use point_diffuse::denoiser::DenoiserParams;
use point_diffuse::error::Error;
use point_diffuse::geom::SemanticCloud;
use point_diffuse::pipeline::{
    complete, evaluate_scene, fit, load_scenes, scene_file_name, sweep, write_sweep_csv, Region, SamplingSettings,
    SweepAxis,
};
use point_diffuse::refinement::RefinerParams;
use point_diffuse::rng::RngStream;
use point_diffuse::training::TrainOutputs;

const THREADS_VAR: &str = "POINT_DIFFUSE_THREADS";
const DENOISER_FILE: &str = "denoiser.ckpt";
const REFINER_FILE: &str = "refiner.ckpt";
const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Parser)]
#[command(name = "point-diffuse", version, about = "Semantic scene completion by point diffusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    schedule: Option<ScheduleArg>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    duplication: Option<usize>,
    /// Overrides `refine`.
    #[arg(long)]
    refine: Option<bool>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleArg {
    Linear,
    Cosine,
    CosineLiteral,
    Sigmoid,
}

impl From<ScheduleArg> for ScheduleName {
    fn from(s: ScheduleArg) -> Self {
        match s {
            ScheduleArg::Linear => ScheduleName::Linear,
            ScheduleArg::Cosine => ScheduleName::Cosine,
            ScheduleArg::CosineLiteral => ScheduleName::CosineLiteral,
            ScheduleArg::Sigmoid => ScheduleName::Sigmoid,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegionArg {
    Known,
    Occluded,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic scenes into the `--out` directory.
    Gen {
        #[arg(long)]
        count: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a scene directory; `--out` receives the model directory.
    Train {
        /// Defaults to `train_dir` from the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Complete one scan and write the result as PLY to `--out`.
    Sample {
        /// Directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// A `.scene` file, or a KITTI `.bin` scan (requires `--labels`).
        #[arg(long)]
        scan: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Score a PLY prediction against a scene; `--out` receives the CSVs.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, value_enum, default_value = "known")]
        region: RegionArg,
        #[command(flatten)]
        common: Common,
    },
    /// Train and evaluate one model per value; `--out` receives the CSV.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated values, e.g. `linear,cosine,sigmoid`.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Defaults to `train_dir` from the config.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Defaults to `val_dir` from the config.
        #[arg(long)]
        val: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) => match e {
                Error::InvalidArgument(_) | Error::Config { .. } | Error::Io { .. } => 2,
                Error::Format { .. } | Error::EmptyCloud(_) | Error::ShapeMismatch { .. } => 3,
                Error::Numerical(_) => 4,
            },
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "{m}"),
            Failure::Core(e) => write!(f, "{e}"),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> Outcome<T> {
    Err(Failure::Usage(msg.into()))
}

impl Common {
    /// File values first, then flags, then validation.
    fn resolve(&self, fallback: Option<&Path>) -> Outcome<RunConfig> {
        let mut cfg = match self.config.as_deref().or(fallback) {
            Some(path) => RunConfig::load_unchecked(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.schedule {
            cfg.schedule = v.into();
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.duplication {
            cfg.duplication = v;
        }
        if let Some(v) = self.refine {
            cfg.refine = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out(&self) -> Outcome<&Path> {
        match &self.out {
            Some(p) => Ok(p),
            None => usage("--out is required"),
        }
    }
}

fn create_dir(dir: &Path) -> Outcome {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Core(Error::Io { path: dir.into(), source: e }))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::Core(Error::Io { path: path.into(), source: e }))
}

fn must_exist(path: &Path, what: &str) -> Outcome {
    if path.exists() {
        Ok(())
    } else {
        usage(format!("{what} {} does not exist", path.display()))
    }
}

fn data_dir(flag: &Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> Outcome<PathBuf> {
    match flag.as_ref().or(configured.as_ref()) {
        Some(p) => Ok(p.clone()),
        None => usage(format!("no {name} directory: pass --{name} or set {name}_dir in the config")),
    }
}

fn load_nonempty(dir: &Path) -> Outcome<Vec<point_diffuse::dataset::SceneSample>> {
    must_exist(dir, "data directory")?;
    let scenes = load_scenes(dir)?;
    if scenes.is_empty() {
        return usage(format!("{} holds no .scene files", dir.display()));
    }
    Ok(scenes)
}

fn cmd_gen(count: usize, common: &Common) -> Outcome {
    let cfg = common.resolve(None)?;
    let out = common.out()?;
    create_dir(out)?;
    let synth = SynthConfig::default();
    let stream = RngStream::new(cfg.seed);
    for i in 0..count {
        let scene = quantize(&generate_scene(&synth, &stream, i as u64)?)?;
        write_scene(&scene, &out.join(scene_file_name(i)))?;
    }
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}

fn cmd_train(data: &Option<PathBuf>, common: &Common) -> Outcome {
    let cfg = common.resolve(None)?;
    let out = common.out()?;
    let dir = data_dir(data, &cfg.train_dir, "data")?;
    let scenes = load_nonempty(&dir)?;
    create_dir(out)?;
    write_text(&out.join(CONFIG_FILE), &cfg.to_toml())?;
    let outputs = TrainOutputs {
        checkpoint_dir: Some(out.join("epochs")),
        loss_csv: Some(out.join("loss.csv")),
    };
    let (model, outcome) = fit(&scenes, &cfg, &outputs)?;
    model.denoiser.save(&out.join(DENOISER_FILE))?;
    if let Some(r) = &model.refiner {
        r.save(&out.join(REFINER_FILE))?;
    }
    match outcome.final_l2() {
        Some(l2) => println!("trained on {} scenes, final epoch mean l2 {l2:.6}", scenes.len()),
        None => println!("no training steps run, checkpoint holds the initialization"),
    }
    Ok(())
}

/// The partial cloud of a `.scene` file, or a KITTI scan passed through the
/// segmentation stand-in.
fn load_partial(scan: &Path, labels: Option<&Path>, seed: u64) -> Outcome<SemanticCloud> {
    if scan.extension().is_some_and(|e| e == "scene") {
        return Ok(read_scene(scan)?.partial);
    }
    let Some(labels) = labels else {
        return usage("a KITTI scan needs --labels for the segmentation stand-in");
    };
    let kitti = read_kitti_scan(scan, Some(labels))?;
    let raw = kitti.labels.unwrap_or_default();
    let (positions, classes): (Vec<[f64; 3]>, Vec<usize>) = kitti
        .points
        .iter()
        .zip(&raw)
        .filter_map(|(p, &l)| kitti_learning_map(l).map(|c| ([p[0] as f64, p[1] as f64, p[2] as f64], c)))
        .unzip();
    let synth = SynthConfig::default();
    let mut rng = RngStream::new(seed).derive("segment").rng(0, 0);
    Ok(oracle_segment(&positions, &classes, ColorMap::kitti().len(), synth.flip_rate, synth.confidence, &mut rng)?)
}

fn cmd_sample(model: &Path, scan: &Path, labels: Option<&Path>, common: &Common) -> Outcome {
    must_exist(model, "model directory")?;
    must_exist(scan, "scan")?;
    let saved = model.join(CONFIG_FILE);
    let cfg = common.resolve(saved.exists().then_some(saved.as_path()))?;
    let out = common.out()?;
    let params = DenoiserParams::load(&model.join(DENOISER_FILE))?;
    let refiner_path = model.join(REFINER_FILE);
    let refiner = if cfg.refine && refiner_path.exists() {
        Some(RefinerParams::load(&refiner_path)?)
    } else {
        None
    };
    let partial = load_partial(scan, labels, cfg.seed)?;
    if partial.class_count() != params.shape().class_count {
        return Err(Error::ShapeMismatch {
            context: "scan classes vs checkpoint",
            expected: params.shape().class_count,
            actual: partial.class_count(),
        }
        .into());
    }
    let settings = SamplingSettings::from_config(&cfg)?;
    let c = complete(&partial, &params, &settings, refiner.as_ref(), &RngStream::new(cfg.seed).derive("sample"))?;
    println!("input points: {}", c.input_count);
    println!("duplicated points: {}", c.chain_count);
    println!("completed points: {}", c.completed.len());
    if let Some(r) = &c.refined {
        println!("refined points: {}", r.len());
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    export_ply(c.output(), out, &ColorMap::for_class_count(partial.class_count()))?;
    Ok(())
}

fn cmd_eval(pred: &Path, scene: &Path, region: RegionArg, common: &Common) -> Outcome {
    must_exist(pred, "prediction")?;
    must_exist(scene, "scene")?;
    let cfg = common.resolve(None)?;
    let volume = cfg.eval_volume()?;
    let scene = read_scene(scene)?;
    let pred = read_ply(pred, &ColorMap::for_class_count(scene.class_count()))?;
    let region = match region {
        RegionArg::Known => Region::Known,
        RegionArg::Occluded => Region::Occluded,
    };
    let report = evaluate_scene(&pred, &scene, &volume, region)?;
    if let Some(out) = &common.out {
        create_dir(out)?;
        report.save(&out.join("classes.csv"), &out.join("summary.csv"))?;
    }
    println!("iou_sc={} miou_ssc={} masked_voxels={}", report.iou_sc, report.miou_ssc, report.masked_voxels);
    Ok(())
}

fn cmd_sweep(axis: &str, values: &[String], train: &Option<PathBuf>, val: &Option<PathBuf>, common: &Common) -> Outcome {
    let cfg = common.resolve(None)?;
    let Some(axis) = SweepAxis::parse(axis) else {
        return usage(format!("unknown sweep axis '{axis}', expected schedule or lambda"));
    };
    for v in values {
        axis.apply(&cfg, v)?;
    }
    let out = common.out()?;
    let train = load_nonempty(&data_dir(train, &cfg.train_dir, "train")?)?;
    let val = load_nonempty(&data_dir(val, &cfg.val_dir, "val")?)?;
    let rows = sweep(&cfg, axis, values, &train, &val, |r| {
        println!("{} iou_sc={} miou_ssc={} final_l2={}", r.value, r.iou_sc, r.miou_ssc, r.final_l2)
    })?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let file = File::create(out).map_err(|e| Error::Io { path: out.into(), source: e })?;
    let mut w = BufWriter::new(file);
    write_sweep_csv(&rows, &mut w)
        .and_then(|_| w.flush())
        .map_err(|e| Failure::Core(Error::Io { path: out.into(), source: e }))
}

fn configure_threads() -> Outcome {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = match value.parse() {
        Ok(n) if n > 0 => n,
        _ => return usage(format!("{THREADS_VAR} must be a positive integer, got '{value}'")),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Usage(e.to_string()))
}

fn run(cli: Cli) -> Outcome {
    configure_threads()?;
    match &cli.command {
        Command::Gen { count, common } => cmd_gen(*count, common),
        Command::Train { data, common } => cmd_train(data, common),
        Command::Sample { model, scan, labels, common } => cmd_sample(model, scan, labels.as_deref(), common),
        Command::Eval { pred, scene, region, common } => cmd_eval(pred, scene, *region, common),
        Command::Sweep { axis, values, train, val, common } => cmd_sweep(axis, values, train, val, common),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
