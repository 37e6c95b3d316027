//! Argument definitions and command bodies. `main` only parses and maps the
//! error to an exit status.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use oacnn_core::aggregator::{receptive_field_color, receptive_field_sizes};
use oacnn_core::geometry::voxelize;
use oacnn_core::network::{Model, ModelConfig, Variant, DEFAULT_SEED};
use oacnn_core::training::gradcheck::{run_scope, CheckOptions, CheckReport, Scope};
use oacnn_core::training::synth::NUM_CLASSES;
use oacnn_core::training::{train_loop, AdamWConfig, ConfusionMatrix, EpochMetrics, TrainConfig};
use oacnn_core::{Error, SparseTensor};
use serde::Serialize;
use serde_json::json;

use crate::bench::{run_bench, BenchConfig, DEFAULT_DENSITY};
use crate::checkpoint::{load_model, write_checkpoint_file};
use crate::error::IoError;
use crate::loader::{load_scene, DataSpec};
use crate::manifest::{manifest_path, RunManifest};
use crate::metrics_log::MetricsWriter;
use crate::ply::{write_ply_file, PlyCloud, PlyWriteOptions};
use crate::scene::write_scene_file;

pub const SEED_ENV: &str = "OA_SEED";
pub const CHECKPOINT_FILE: &str = "checkpoint.oacn";
pub const METRICS_FILE: &str = "metrics.jsonl";

/// Per-class colors for labeled PLY output; classes past the end wrap.
pub const CLASS_COLORS: [[u8; 3]; 12] = [
    [152, 223, 138],
    [174, 199, 232],
    [31, 119, 180],
    [255, 187, 120],
    [188, 189, 34],
    [140, 86, 75],
    [255, 152, 150],
    [214, 39, 40],
    [197, 176, 213],
    [148, 103, 189],
    [196, 156, 148],
    [23, 190, 207],
];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    /// A check ran and found a violation.
    #[error("verification failed: {0}")]
    Verify(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Io(IoError::Core(e))
    }
}

impl CliError {
    /// 1 verification failure, 2 usage or config, 3 input/output.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Verify(_) => 1,
            CliError::Io(IoError::Core(e)) => match e {
                Error::Config(_) | Error::Compat(_) | Error::InvalidGridSize { .. } => 2,
                Error::Numeric(_) => 1,
                _ => 3,
            },
            CliError::Io(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser, Serialize)]
#[command(name = "oacnn", version, about = "Sparse voxel segmentation with adaptive relation convolution")]
pub struct Cli {
    /// Worker threads (default: available parallelism). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Quantize a PLY or text point file into a voxel scene file.
    Voxelize(VoxelizeArgs),
    /// Train a model and write a checkpoint and a metrics log.
    Train(TrainArgs),
    /// Predict per-voxel classes with a checkpoint.
    Infer(InferArgs),
    /// Color voxels by the receptive-field size the aggregator picks.
    RfViz(RfVizArgs),
    /// Compare analytic gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Time forward passes on random voxel sets.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct VoxelizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.02)]
    pub voxel_size: f64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// S, B, L or micro.
    #[arg(long, default_value = "micro")]
    pub model: Variant,
    /// `synth:<start>..<end>` seeds, or a directory of labeled point files.
    #[arg(long, default_value = "synth:0..64")]
    pub data: String,
    /// The last this many scenes are held out for evaluation.
    #[arg(long, default_value_t = 16)]
    pub holdout: usize,
    #[arg(long, default_value_t = 40)]
    pub epochs: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 20_000)]
    pub max_points: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.02)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.02)]
    pub voxel_size: f64,
    /// Defaults to the synthetic class count, or max label + 1 for directories.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Defaults to $OA_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single grid scale per stage and no preference weights.
    #[arg(long)]
    pub no_adaptive: bool,
    #[arg(long)]
    pub no_residual: bool,
    #[arg(long)]
    pub no_augment: bool,
    /// Multiplies every grid size.
    #[arg(long)]
    pub grid_scale: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// No per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Point file (voxelized at the checkpoint's voxel size) or `.oavx` scene.
    #[arg(long)]
    pub input: PathBuf,
    /// One predicted class per line, in voxel order.
    #[arg(long)]
    pub output_labels: PathBuf,
    /// Voxel centers colored by predicted class.
    #[arg(long)]
    pub output_ply: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RfVizArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    /// Encoder stage, counted from 0.
    #[arg(long, default_value_t = 0)]
    pub stage: usize,
    #[arg(long)]
    pub output_ply: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GradcheckArgs {
    /// ops, arconv, aggregator, network or all.
    #[arg(long, default_value = "all")]
    pub scope: Scope,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON report of every check.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Falsifies one analytic gradient entry; the run must then fail.
    #[arg(long, hide = true)]
    pub corrupt_gradient: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value = "micro")]
    pub model: Variant,
    #[arg(long, default_value_t = 100_000)]
    pub voxels: usize,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    #[arg(long, default_value_t = DEFAULT_DENSITY)]
    pub density: f64,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Flag, then `$OA_SEED`, then the default.
pub fn resolve_seed(flag: Option<u64>) -> CliResult<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")).into()),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let threads = match cli.threads {
        Some(0) => return Err(Error::Config("--threads must be positive".into()).into()),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Voxelize(a) => cmd_voxelize(a),
        Command::Train(a) => cmd_train(a).map(|_| ()),
        Command::Infer(a) => cmd_infer(a).map(|_| ()),
        Command::RfViz(a) => cmd_rfviz(a).map(|_| ()),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Bench(a) => cmd_bench(a),
    })
}

fn to_json<T: Serialize>(v: &T) -> CliResult<serde_json::Value> {
    Ok(serde_json::to_value(v).map_err(IoError::from)?)
}

fn finish(mut m: RunManifest, started: Instant, inputs: &[&Path], outputs: &[&Path], at: &Path) -> CliResult<()> {
    m.inputs = inputs.iter().map(|p| p.to_path_buf()).collect();
    m.outputs = outputs.iter().map(|p| p.to_path_buf()).collect();
    m.finish(started).write(at)?;
    Ok(())
}

pub fn cmd_voxelize(a: &VoxelizeArgs) -> CliResult<()> {
    let started = Instant::now();
    let pc = crate::loader::load_points(&a.input)?;
    let scene = voxelize(&pc, a.voxel_size)?;
    write_scene_file(&a.output, &scene)?;
    println!("{} points -> {} voxels", pc.len(), scene.tensor.len());
    let m = RunManifest::new("voxelize", 0, to_json(a)?);
    finish(m, started, &[&a.input], &[&a.output], &manifest_path(&a.output))
}

/// Builds the model config a training run uses.
pub fn train_model_config(a: &TrainArgs, classes: usize, seed: u64) -> CliResult<ModelConfig> {
    let mut cfg = ModelConfig::variant(a.model, classes);
    cfg.voxel_size = a.voxel_size;
    cfg.seed = seed;
    cfg.adaptive_aggregator = !a.no_adaptive;
    cfg.residual = !a.no_residual;
    if let Some(f) = a.grid_scale {
        cfg = cfg.with_grid_scale(f)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub metrics: Vec<EpochMetrics>,
}

pub fn cmd_train(a: &TrainArgs) -> CliResult<TrainOutcome> {
    let started = Instant::now();
    let seed = resolve_seed(a.seed)?;
    let spec: DataSpec = a.data.parse()?;
    let train_cfg = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        max_points: a.max_points,
        optim: AdamWConfig { lr: a.lr, weight_decay: a.weight_decay, ..AdamWConfig::default() },
        augment: !a.no_augment,
        seed,
    };
    train_cfg.validate()?;
    if let Some(c) = a.classes {
        // Checked before loading so a bad flag fails without any work.
        if c < 2 {
            return Err(Error::Config(format!("--classes must be at least 2, got {c}")).into());
        }
    }
    if matches!(spec, DataSpec::Synth { .. }) {
        train_model_config(a, a.classes.unwrap_or(NUM_CLASSES), seed)?;
    }

    let clouds = spec.load()?;
    if a.holdout == 0 || a.holdout >= clouds.len() {
        return Err(Error::Config(format!(
            "--holdout {} must leave at least one of {} scenes for training",
            a.holdout,
            clouds.len()
        ))
        .into());
    }
    let classes = match (a.classes, &spec) {
        (Some(c), _) => c,
        (None, DataSpec::Synth { .. }) => NUM_CLASSES,
        (None, DataSpec::Dir(_)) => {
            let max = clouds.iter().flat_map(|c| c.labels().unwrap_or(&[]).iter().copied()).max().unwrap_or(0);
            (max as usize + 1).max(2)
        }
    };
    let cfg = train_model_config(a, classes, seed)?;
    let (train, eval) = clouds.split_at(clouds.len() - a.holdout);
    let eval = eval.iter().map(|pc| voxelize(pc, cfg.voxel_size)).collect::<Result<Vec<_>, _>>()?;

    fs::create_dir_all(&a.out).map_err(IoError::file(&a.out))?;
    let metrics_path = a.out.join(METRICS_FILE);
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    let mut writer = MetricsWriter::create(&metrics_path)?;
    let mut model = Model::<f32>::new(cfg.clone())?;
    let mut write_err = None;
    let metrics = train_loop(&mut model, train, &eval, &train_cfg, |m| {
        if !a.quiet {
            eprintln!("epoch {:>3}  loss {:.4}  acc {:.4}  mIoU {:.4}", m.epoch, m.train_loss, m.eval_acc, m.eval_miou);
        }
        if write_err.is_none() {
            write_err = writer.push(m).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    write_checkpoint_file(&ckpt_path, &model)?;

    let config = json!({ "args": to_json(a)?, "model": to_json(&cfg)?, "train": to_json(&train_cfg)? });
    let m = RunManifest::new("train", seed, config);
    let inputs: Vec<&Path> = match &spec {
        DataSpec::Dir(d) => vec![d.as_path()],
        DataSpec::Synth { .. } => vec![],
    };
    finish(m, started, &inputs, &[&ckpt_path, &metrics_path], &a.out.join("manifest.json"))?;
    Ok(TrainOutcome { model, metrics })
}

fn check_input_channels(model: &Model<f32>, x: &SparseTensor<f32>) -> CliResult<()> {
    if x.channels() != model.config.in_channels {
        return Err(Error::Compat(format!(
            "checkpoint expects {} input channels, input has {}",
            model.config.in_channels,
            x.channels()
        ))
        .into());
    }
    Ok(())
}

pub struct InferOutcome {
    pub predictions: Vec<u16>,
    /// Present when the input carries labels.
    pub confusion: Option<ConfusionMatrix>,
}

pub fn cmd_infer(a: &InferArgs) -> CliResult<InferOutcome> {
    let started = Instant::now();
    let model = load_model(&a.ckpt)?;
    let scene = load_scene(&a.input, model.config.voxel_size)?;
    check_input_channels(&model, &scene.tensor)?;
    let pred = model.classify(&scene.tensor)?;

    let f = fs::File::create(&a.output_labels).map_err(IoError::file(&a.output_labels))?;
    let mut w = BufWriter::new(f);
    for p in &pred {
        writeln!(w, "{p}").map_err(IoError::file(&a.output_labels))?;
    }
    w.flush().map_err(IoError::file(&a.output_labels))?;

    let mut outputs: Vec<&Path> = vec![&a.output_labels];
    if let Some(ply) = &a.output_ply {
        let colors = pred
            .iter()
            .map(|&p| CLASS_COLORS[p as usize % CLASS_COLORS.len()].map(|c| c as f32 / 255.0))
            .collect();
        let cloud = PlyCloud {
            positions: scene.tensor.centers(scene.voxel_size),
            colors: Some(colors),
            labels: Some(pred.clone()),
        };
        write_ply_file(ply, &cloud, PlyWriteOptions::default())?;
        outputs.push(ply);
    }

    let confusion = match &scene.labels {
        Some(labels) => {
            let mut cm = ConfusionMatrix::new(model.config.num_classes);
            cm.add(&pred, labels)?;
            println!("{} voxels  accuracy {:.4}  mIoU {:.4}", pred.len(), cm.accuracy(), cm.miou());
            Some(cm)
        }
        None => {
            println!("{} voxels", pred.len());
            None
        }
    };
    let m = RunManifest::new("infer", model.config.seed, to_json(a)?);
    finish(m, started, &[&a.ckpt, &a.input], &outputs, &manifest_path(&a.output_labels))?;
    Ok(InferOutcome { predictions: pred, confusion })
}

/// Receptive-field sizes and their colors, one per voxel of the stage.
pub struct RfVizOutcome {
    pub sizes: Vec<f64>,
    pub colors: Vec<[u8; 3]>,
    pub grid_range: (f64, f64),
}

pub fn cmd_rfviz(a: &RfVizArgs) -> CliResult<RfVizOutcome> {
    let started = Instant::now();
    let model = load_model(&a.ckpt)?;
    if a.stage >= model.config.stages() {
        return Err(Error::Config(format!(
            "--stage {} out of range, model has {} stages",
            a.stage,
            model.config.stages()
        ))
        .into());
    }
    let scene = load_scene(&a.input, model.config.voxel_size)?;
    check_input_channels(&model, &scene.tensor)?;
    let (coords, w) = model.preferences(&scene.tensor, a.stage)?;
    let grids = model.config.effective_grid_sizes(a.stage);
    let sizes = receptive_field_sizes(&w, &grids)?;
    let lo = *grids.iter().min().expect("validated config has grid sizes") as f64;
    let hi = *grids.iter().max().expect("validated config has grid sizes") as f64;
    let colors: Vec<[u8; 3]> = sizes.iter().map(|&r| receptive_field_color(r, lo, hi)).collect();

    let stride = model.config.stride(a.stage);
    let half = stride as f64 * 0.5;
    let v = model.config.voxel_size;
    let cloud = PlyCloud {
        positions: coords.iter().map(|c| [(c.x as f64 + half) * v, (c.y as f64 + half) * v, (c.z as f64 + half) * v]).collect(),
        colors: Some(colors.iter().map(|c| c.map(|x| x as f32 / 255.0)).collect()),
        labels: None,
    };
    write_ply_file(&a.output_ply, &cloud, PlyWriteOptions::default())?;
    let mean = sizes.iter().sum::<f64>() / sizes.len().max(1) as f64;
    let (rmin, rmax) = sizes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &r| (a.min(r), b.max(r)));
    println!("stage {}: {} voxels  r min {rmin:.3}  mean {mean:.3}  max {rmax:.3}  (grid sizes {grids:?})", a.stage, sizes.len());
    let m = RunManifest::new("rf-viz", model.config.seed, to_json(a)?);
    finish(m, started, &[&a.ckpt, &a.input], &[&a.output_ply], &manifest_path(&a.output_ply))?;
    Ok(RfVizOutcome { sizes, colors, grid_range: (lo, hi) })
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    let started = Instant::now();
    let seed = resolve_seed(a.seed)?;
    let reports: Vec<CheckReport> = run_scope(a.scope, CheckOptions { seed, corrupt: a.corrupt_gradient })?;
    let mut failed = Vec::new();
    for r in &reports {
        let ok = r.passes(a.tol);
        println!(
            "{:<4} {:<28} max rel err {:.3e}  worst {} (analytic {:.6e}, numeric {:.6e})  {} scalars",
            if ok { "ok" } else { "FAIL" },
            r.name,
            r.max_rel_err,
            r.worst,
            r.worst_values.0,
            r.worst_values.1,
            r.checked
        );
        if !ok {
            failed.push(r.name.clone());
        }
    }
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&reports).map_err(IoError::from)?;
        fs::write(path, text + "\n").map_err(IoError::file(path))?;
        let m = RunManifest::new("gradcheck", seed, to_json(a)?);
        finish(m, started, &[], &[path], &manifest_path(path))?;
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verify(format!("gradient check above {:e}: {}", a.tol, failed.join(", "))))
    }
}

pub fn cmd_bench(a: &BenchArgs) -> CliResult<()> {
    let started = Instant::now();
    let seed = resolve_seed(a.seed)?;
    if a.voxels == 0 || a.repeat == 0 || !(a.density > 0.0 && a.density <= 1.0) {
        return Err(Error::Config("bench needs voxels > 0, repeat > 0 and density in (0, 1]".into()).into());
    }
    let report = run_bench(&BenchConfig { model: a.model, voxels: a.voxels, repeat: a.repeat, density: a.density, seed })?;
    let text = serde_json::to_string_pretty(&report).map_err(IoError::from)?;
    println!("{text}");
    if let Some(path) = &a.output {
        fs::write(path, text + "\n").map_err(IoError::file(path))?;
        let m = RunManifest::new("bench", seed, to_json(a)?);
        finish(m, started, &[], &[path], &manifest_path(path))?;
    }
    Ok(())
}
