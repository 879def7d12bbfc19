//! Command-line front end. Exit codes: 0 success, 1 runtime error, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::conditioning::{ConditioningMode, MaskStrategy, PoseInputs};
use crate::diffusion::{
    initial_noise, prepare_all, sample_tryon, RunConfig, Trainer, TryOnModel, TryOnRequest,
};
use crate::error::Error;
use crate::evalmetrics::{evaluate, CodecFeatures, EvalReport};
use crate::imaging::io::{load_image, load_mask, load_posemap, save_image, write_bytes};
use crate::imaging::{derive_bbox_mask, Image, SkeletonPose};
use crate::synthdata::{generate_dataset, load_sample, load_split, DatasetConfig, Split};

pub const THREADS_ENV: &str = "STITCHVTON_THREADS";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "stitchvton",
    version,
    about = "Pose-conditioned latent-diffusion virtual try-on"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic sprite corpus.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also render a second pose per sample.
        #[arg(long)]
        pose_transfer: bool,
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train a denoiser on the train split of a corpus.
    Train {
        /// RunConfig JSON; omitted keys take their defaults.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_ckpt: PathBuf,
    },
    /// Dress a person image in a garment.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        person: PathBuf,
        #[arg(long)]
        garment: PathBuf,
        /// Keep mask PNG: white keeps, black is editable.
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        mode: ConditioningMode,
        #[arg(long)]
        pose_skeleton: Option<PathBuf>,
        #[arg(long)]
        pose_map: Option<PathBuf>,
        #[arg(long, default_value = "fine-grained")]
        mask_strategy: MaskStrategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the assembled network input of a sample as a PNG mosaic.
    ShowConditioning {
        /// Sample directory inside a generated corpus.
        #[arg(long)]
        sample: PathBuf,
        #[arg(long)]
        mode: ConditioningMode,
        #[arg(long, default_value = "fine-grained")]
        mask_strategy: MaskStrategy,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate checkpoints on the test split.
    Eval {
        /// One checkpoint per mode, in the order of `--modes`.
        #[arg(long, required = true, num_args = 1..)]
        ckpt: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, num_args = 1..)]
        modes: Vec<ConditioningMode>,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Evaluate only the first `limit` test samples.
        #[arg(long)]
        limit: Option<usize>,
    },
}

/// Failure of one command.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

fn configure_threads() {
    let n = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .unwrap_or(0);
    // Fails only if the pool already exists, e.g. when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
}

pub fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenData {
            n,
            seed,
            out,
            pose_transfer,
            size,
        } => gen_data(n, seed, &out, pose_transfer, size),
        Command::Train {
            config,
            data,
            out_ckpt,
        } => train(&config, &data, &out_ckpt),
        Command::Infer {
            ckpt,
            person,
            garment,
            mask,
            mode,
            pose_skeleton,
            pose_map,
            mask_strategy,
            seed,
            out,
        } => infer(InferArgs {
            ckpt,
            person,
            garment,
            mask,
            mode,
            pose_skeleton,
            pose_map,
            mask_strategy,
            seed,
            out,
        }),
        Command::ShowConditioning {
            sample,
            mode,
            mask_strategy,
            seed,
            out,
        } => show_conditioning(&sample, mode, mask_strategy, seed, &out),
        Command::Eval {
            ckpt,
            data,
            modes,
            report,
            seed,
            limit,
        } => eval(&ckpt, &data, &modes, &report, seed, limit),
    }
}

#[derive(Serialize)]
struct RunRecord<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    config: C,
    inputs: serde_json::Value,
}

/// `run.json` inside `dir`.
fn write_run_json<C: Serialize>(
    dir: &Path,
    command: &str,
    config: C,
    inputs: serde_json::Value,
) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rec = RunRecord {
        command,
        version: VERSION,
        config,
        inputs,
    };
    let text = serde_json::to_string_pretty(&rec).map_err(Error::from)?;
    Ok(write_bytes(&dir.join("run.json"), text.as_bytes())?)
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn create_parent(path: &Path) -> CliResult<()> {
    let dir = parent_dir(path);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(())
}

fn gen_data(n: usize, seed: u64, out: &Path, pose_transfer: bool, size: usize) -> CliResult<()> {
    let cfg = DatasetConfig {
        size,
        pose_transfer,
        ..DatasetConfig::default()
    };
    let m = generate_dataset(n, seed, out, &cfg)?;
    write_run_json(out, "gen-data", cfg, json!({ "n": n, "seed": seed }))?;
    println!(
        "wrote {} samples ({} train, {} test) to {}",
        n,
        m.count(Split::Train),
        m.count(Split::Test),
        out.display()
    );
    Ok(())
}

fn read_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    RunConfig::from_json(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn train(config: &Path, data: &Path, out_ckpt: &Path) -> CliResult<()> {
    let cfg = read_config(config)?;
    let samples = load_split(data, Split::Train)?;
    let model = TryOnModel::new(cfg.clone())?;
    eprintln!(
        "training {} ({} parameters) on {} samples for {} steps",
        cfg.mode,
        model.net.param_count(),
        samples.len(),
        cfg.steps
    );
    let prepared = prepare_all(&model, &samples)?;
    let mut trainer = Trainer::new(model, prepared)?;
    let start = Instant::now();
    trainer.run(cfg.steps, |step, loss| {
        if step % 100 == 0 || step == 1 {
            eprintln!(
                "step {step:6} loss {loss:.5} {:.1}s",
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    create_parent(out_ckpt)?;
    let losses: String = trainer
        .losses
        .iter()
        .enumerate()
        .map(|(i, l)| format!("{},{l}\n", i + 1))
        .collect();
    write_bytes(
        &out_ckpt.with_extension("losses.csv"),
        format!("step,loss\n{losses}").as_bytes(),
    )?;
    trainer.into_model().save(out_ckpt)?;
    write_run_json(
        &parent_dir(out_ckpt),
        "train",
        &cfg,
        json!({ "data": data, "config": config, "out_ckpt": out_ckpt }),
    )?;
    println!("saved {}", out_ckpt.display());
    Ok(())
}

struct InferArgs {
    ckpt: PathBuf,
    person: PathBuf,
    garment: PathBuf,
    mask: PathBuf,
    mode: ConditioningMode,
    pose_skeleton: Option<PathBuf>,
    pose_map: Option<PathBuf>,
    mask_strategy: MaskStrategy,
    seed: u64,
    out: PathBuf,
}

/// Checks that the pose files the mode needs were given.
pub fn check_pose_flags(mode: ConditioningMode, skeleton: bool, pose_map: bool) -> CliResult<()> {
    if mode.uses_skeleton() && !skeleton {
        return Err(usage(format!(
            "mode `{mode}` needs a pose skeleton: pass --pose-skeleton <json>"
        )));
    }
    if mode.uses_pose_map() && !pose_map {
        return Err(usage(format!(
            "mode `{mode}` needs a pose map: pass --pose-map <png>"
        )));
    }
    Ok(())
}

fn infer(a: InferArgs) -> CliResult<()> {
    check_pose_flags(a.mode, a.pose_skeleton.is_some(), a.pose_map.is_some())?;
    let model = TryOnModel::load(&a.ckpt)?;
    if model.mode() != a.mode {
        return Err(usage(format!(
            "checkpoint was trained for `{}`, but --mode is `{}`",
            model.mode(),
            a.mode
        )));
    }
    let person = load_image(&a.person)?;
    let garment = load_image(&a.garment)?;
    let keep = load_mask(&a.mask)?;
    let skeleton = a
        .pose_skeleton
        .as_deref()
        .map(SkeletonPose::load)
        .transpose()?;
    let pose_map = a.pose_map.as_deref().map(load_posemap).transpose()?;
    let req = TryOnRequest {
        person: &person,
        garment: &garment,
        pose: PoseInputs {
            skeleton: skeleton.as_ref().filter(|_| a.mode.uses_skeleton()),
            pose_map: pose_map.as_ref().filter(|_| a.mode.uses_pose_map()),
        },
        keep: &keep,
        strategy: a.mask_strategy,
        seed: a.seed,
    };
    let img = sample_tryon(&model, a.mode, &req)?;
    create_parent(&a.out)?;
    save_image(&img, &a.out)?;
    write_run_json(
        &parent_dir(&a.out),
        "infer",
        &model.config,
        json!({
            "ckpt": a.ckpt, "person": a.person, "garment": a.garment, "mask": a.mask,
            "pose_skeleton": a.pose_skeleton, "pose_map": a.pose_map,
            "mask_strategy": a.mask_strategy, "seed": a.seed, "out": a.out,
        }),
    )?;
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Pixels per latent cell in the mosaic.
pub const MOSAIC_SCALE: usize = 8;
const MOSAIC_GAP: usize = 2;

/// Stacks the channels of a `(1, C, h, w)` tensor top to bottom, each plane
/// min-max normalized and enlarged by `MOSAIC_SCALE`.
pub fn latent_mosaic(t: &crate::numerics::Tensor) -> crate::Result<Image> {
    let [n, c, h, w] = t.shape();
    if n != 1 {
        return Err(Error::contract("mosaic takes a single item"));
    }
    let (ph, pw) = (h * MOSAIC_SCALE, w * MOSAIC_SCALE);
    let height = c * ph + (c - 1) * MOSAIC_GAP;
    let mut img = Image::filled(height, pw, [1.0, 0.0, 0.0])?;
    for ch in 0..c {
        let plane = &t.data()[ch * h * w..(ch + 1) * h * w];
        let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = if hi > lo { hi - lo } else { 0.0 };
        let y0 = ch * (ph + MOSAIC_GAP);
        for y in 0..ph {
            for x in 0..pw {
                let v = plane[(y / MOSAIC_SCALE) * w + x / MOSAIC_SCALE];
                let g = if span > 0.0 { (v - lo) / span } else { 0.5 };
                img.put(y0 + y, x, [g; 3]);
            }
        }
    }
    Ok(img)
}

fn show_conditioning(
    sample: &Path,
    mode: ConditioningMode,
    strategy: MaskStrategy,
    seed: u64,
    out: &Path,
) -> CliResult<()> {
    let s = load_sample(sample)?;
    let config = RunConfig {
        mode,
        image_size: s.person.height(),
        ..RunConfig::default()
    };
    let model = TryOnModel::new(config)?;
    let keep = match strategy {
        MaskStrategy::FineGrained => s.fine_mask.clone(),
        MaskStrategy::BoundingBox => derive_bbox_mask(&s.fine_mask)?,
    };
    let pose = PoseInputs {
        skeleton: mode.uses_skeleton().then_some(&s.skeleton),
        pose_map: mode.uses_pose_map().then_some(&s.pose_map),
    };
    let cond = model.condition(&s.person, &s.garment, pose, &keep)?;
    let (h, w) = cond.latent_dims();
    let stacked = cond.stacked(mode, &initial_noise(seed, h, w), false)?;
    create_parent(out)?;
    save_image(&latent_mosaic(&stacked)?, out)?;
    write_run_json(
        &parent_dir(out),
        "show-conditioning",
        &model.config,
        json!({ "sample": sample, "mask_strategy": strategy, "seed": seed, "out": out,
                "input_shape": stacked.shape() }),
    )?;
    println!("wrote {} (input {:?})", out.display(), stacked.shape());
    Ok(())
}

fn eval(
    ckpts: &[PathBuf],
    data: &Path,
    modes: &[ConditioningMode],
    report: &Path,
    seed: u64,
    limit: Option<usize>,
) -> CliResult<()> {
    if !modes.is_empty() && modes.len() != ckpts.len() {
        return Err(usage(format!(
            "{} modes but {} checkpoints; pass one --ckpt per mode",
            modes.len(),
            ckpts.len()
        )));
    }
    let models: Vec<TryOnModel> = ckpts
        .iter()
        .map(|p| TryOnModel::load(p))
        .collect::<crate::Result<_>>()?;
    for (m, want) in models.iter().zip(modes) {
        if m.mode() != *want {
            return Err(usage(format!(
                "checkpoint for `{}` listed as `{want}`",
                m.mode()
            )));
        }
    }
    let mut samples = load_split(data, Split::Test)?;
    if let Some(k) = limit {
        samples.truncate(k);
    }
    let mut reports = Vec::new();
    for m in &models {
        let start = Instant::now();
        let out = evaluate(m, &samples, &CodecFeatures(m.codec), seed)?;
        eprintln!("{}: {:.1}s", m.mode(), start.elapsed().as_secs_f64());
        reports.push(out.report);
    }
    let r = EvalReport::new(reports);
    create_parent(report)?;
    r.save(report)?;
    let configs: Vec<&RunConfig> = models.iter().map(|m| &m.config).collect();
    write_run_json(
        &parent_dir(report),
        "eval",
        configs,
        json!({ "ckpt": ckpts, "data": data, "seed": seed, "limit": limit, "report": report }),
    )?;
    print!("{}", r.to_csv());
    Ok(())
}
