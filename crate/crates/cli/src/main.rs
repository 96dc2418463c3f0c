//! `mmfield`: scene generation, training, evaluation, rendering, ablation
//! suites and diagnostics for multimodal LiDAR and camera fields.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use nalgebra::Vector3;
use serde::Serialize;

use mmfield::checkpoint::Checkpoint;
use mmfield::config::{RunConfig, SceneSource};
use mmfield::diagnostics::{dump_bev_features, dump_ray_density, BevOptions};
use mmfield::eval::{evaluate, render_frame, EvalOptions};
use mmfield::experiments::{ablate, ExperimentConfig, Suite};
use mmfield::field::{MlpConfig, Model};
use mmfield::grid::GridConfig;
use mmfield::io;
use mmfield::render::{Modality, Ray};
use mmfield::scene::{Dataset, Split};
use mmfield::train::{prepare_model, train, TrainConfig};

#[derive(Parser, Debug)]
#[command(
    name = "mmfield",
    version,
    about = "Multimodal LiDAR and camera neural field lab"
)]
struct Cli {
    /// Worker threads (default: all available cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output on standard error.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Only report errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from a scene preset.
    GenScene(GenSceneArgs),
    /// Train a model from a JSON run configuration.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset split.
    Eval(EvalArgs),
    /// Render the camera image and LiDAR scan of one frame.
    Render(RenderArgs),
    /// Train and evaluate an ablation suite.
    Ablate(AblateArgs),
    /// Write top-down feature magnitude maps of a grid.
    DumpFeatures(DumpFeaturesArgs),
    /// Write densities of one or more models along a ray.
    DumpDensity(DumpDensityArgs),
}

#[derive(Args, Debug, Serialize)]
struct GenSceneArgs {
    /// aligned-street or misaligned-street.
    #[arg(long)]
    preset: String,
    /// Scene override `key=value`; repeatable.
    #[arg(long = "knob")]
    knobs: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Output JSON; per-frame rows go to `<stem>_frames.csv` beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset providing the frame poses and sensor models.
    #[arg(long)]
    data: PathBuf,
    /// Frame index.
    #[arg(long)]
    pose: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AblateArgs {
    /// arch, gaa, sgi, levels or wlambda.
    #[arg(long)]
    suite: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// JSON with `grid`, `mlp`, `train` and `eval` blocks; desk defaults otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DumpFeaturesArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Grid name: lidar, camera, shared or init.
    #[arg(long)]
    grid: String,
    /// Comma-separated 1-based levels.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    levels: Vec<usize>,
    /// Height of the horizontal slice in meters.
    #[arg(long, default_value_t = 0.5)]
    z: f64,
    /// Map size as WIDTHxHEIGHT.
    #[arg(long, default_value = "256x160")]
    resolution: String,
    /// Apply the level mask with this horizon before taking magnitudes.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DumpDensityArgs {
    /// `name=path` or `path`; repeatable, one column per checkpoint.
    #[arg(long = "checkpoint", required = true)]
    checkpoints: Vec<String>,
    /// Dataset to take the ray from (with --frame and --ray).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "lidar")]
    modality: String,
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Flat ray index within the frame.
    #[arg(long)]
    ray: Option<usize>,
    /// Ray origin `x,y,z` (instead of --data).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    origin: Option<Vec<f64>>,
    /// Ray direction `x,y,z`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    direction: Option<Vec<f64>>,
    #[arg(long, default_value_t = 256)]
    samples: usize,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::GenScene(a) => gen_scene(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Render(a) => render_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::DumpFeatures(a) => dump_features(a),
        Command::DumpDensity(a) => dump_density(a),
    }
}

/// Writes the resolved configuration of a command next to its outputs.
fn echo<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        io::create_dir(dir)?;
    }
    io::write_json(path, value)?;
    info!("resolved configuration written to {}", path.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<(Checkpoint, Model)> {
    let ckpt = Checkpoint::load(path)?;
    let model = ckpt.to_model()?;
    Ok((ckpt, model))
}

fn gen_scene(a: GenSceneArgs) -> Result<()> {
    let source = SceneSource {
        preset: a.preset.clone(),
        knobs: a.knobs.clone(),
        seed: a.seed,
    };
    let scene = source.scene()?;
    let dataset = Dataset::generate(&scene, a.seed)?;
    dataset.write(&a.out)?;
    echo(&a.out.join("gen_scene.json"), &source)?;
    info!(
        "wrote {} frames ({} test) to {}",
        dataset.frames.len(),
        dataset.frame_indices(Split::Test).len(),
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let cfg =
        RunConfig::load(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let dataset = cfg.load_dataset()?;
    let resolved = cfg.resolved(&dataset)?;
    echo(&a.out.join("config.json"), &resolved)?;
    let grid = resolved.grid.clone().expect("resolved grid");
    let mut model = prepare_model(
        &resolved.model,
        &grid,
        &resolved.mlp,
        &dataset,
        &resolved.train,
        Some(&a.out),
    )?;
    let report = train(&mut model, &dataset, &resolved.train, Some(&a.out))?;
    if let (Some(first), Some(last)) = (report.first_loss(), report.last_loss()) {
        info!("loss {:.6} -> {:.6}", first.total, last.total);
    }
    info!("checkpoints written to {}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalEcho<'a> {
    checkpoint: &'a Path,
    data: &'a Path,
    options: &'a EvalOptions,
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let split: Split = a.split.parse()?;
    let (ckpt, model) = load_model(&a.checkpoint)?;
    let dataset = Dataset::load(&a.data)?;
    let options = EvalOptions {
        split,
        ..EvalOptions::matching(&ckpt.train_config.sampling, ckpt.train_config.chunk_rays)
    };
    let stem = a
        .out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("metrics");
    echo(
        &a.out.with_file_name(format!("{stem}.config.json")),
        &EvalEcho {
            checkpoint: &a.checkpoint,
            data: &a.data,
            options: &options,
        },
    )?;
    let metrics = evaluate(&model, &dataset, &options)?;
    metrics.write(&a.out)?;
    info!(
        "psnr {:?} ssim {:?} chamfer {:?} fscore {:?}",
        metrics.psnr, metrics.ssim, metrics.chamfer, metrics.fscore
    );
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Result<()> {
    let (ckpt, model) = load_model(&a.checkpoint)?;
    let dataset = Dataset::load(&a.data)?;
    if a.pose >= dataset.frames.len() {
        bail!(
            "pose {} out of range (dataset has {} frames)",
            a.pose,
            dataset.frames.len()
        );
    }
    let options = EvalOptions::matching(&ckpt.train_config.sampling, ckpt.train_config.chunk_rays);
    echo(
        &a.out.join("render.config.json"),
        &EvalEcho {
            checkpoint: &a.checkpoint,
            data: &a.data,
            options: &options,
        },
    )?;
    let r = render_frame(&model, &dataset, a.pose, &options)?;
    if let Some(img) = &r.image {
        let k = dataset.intrinsics();
        io::write_ppm(&a.out.join("camera.ppm"), k.width, k.height, img)?;
        io::write_f32(&a.out.join("camera.f32"), img)?;
    }
    if let Some(scan) = &r.scan {
        let pat = dataset.pattern();
        io::write_f32(&a.out.join("lidar_range.f32"), &scan.range)?;
        io::write_f32(&a.out.join("lidar_intensity.f32"), &scan.intensity)?;
        io::write_f32(&a.out.join("lidar_drop.f32"), &scan.drop)?;
        io::write_json(&a.out.join("lidar.json"), pat)?;
    }
    info!("rendered frame {} to {}", a.pose, a.out.display());
    Ok(())
}

fn default_experiment(dataset: &Dataset) -> ExperimentConfig {
    ExperimentConfig::new(
        GridConfig::desk(dataset.scene.bounds),
        MlpConfig::default(),
        TrainConfig::default(),
    )
}

#[derive(Serialize)]
struct AblateEcho<'a> {
    suite: Suite,
    data: &'a Path,
    experiment: &'a ExperimentConfig,
}

fn ablate_cmd(a: AblateArgs) -> Result<()> {
    let suite: Suite = a.suite.parse()?;
    let dataset = Dataset::load(&a.data)?;
    let cfg = match &a.config {
        Some(p) => io::read_json::<ExperimentConfig>(p)
            .with_context(|| format!("reading {}", p.display()))?,
        None => default_experiment(&dataset),
    };
    cfg.grid.validate()?;
    cfg.train.validate()?;
    echo(
        &a.out.join("ablate.config.json"),
        &AblateEcho {
            suite,
            data: &a.data,
            experiment: &cfg,
        },
    )?;
    let table = ablate(suite, &dataset, &cfg, Some(&a.out))?;
    info!(
        "{} rows written to {}",
        table.rows.len(),
        a.out.join(format!("{}.csv", suite.name())).display()
    );
    Ok(())
}

fn parse_resolution(s: &str) -> Result<[usize; 2]> {
    let (w, h) = s
        .split_once('x')
        .ok_or_else(|| anyhow!("resolution `{s}` is not WIDTHxHEIGHT"))?;
    Ok([w.trim().parse()?, h.trim().parse()?])
}

#[derive(Serialize)]
struct FeaturesEcho<'a> {
    checkpoint: &'a Path,
    grid: &'a str,
    levels: &'a [usize],
    z: f64,
    resolution: [usize; 2],
    beta: Option<f64>,
}

fn dump_features(a: DumpFeaturesArgs) -> Result<()> {
    let (_, model) = load_model(&a.checkpoint)?;
    let resolution = parse_resolution(&a.resolution)?;
    echo(
        &a.out.join("dump_features.config.json"),
        &FeaturesEcho {
            checkpoint: &a.checkpoint,
            grid: &a.grid,
            levels: &a.levels,
            z: a.z,
            resolution,
            beta: a.beta,
        },
    )?;
    let opts = BevOptions {
        grid: a.grid.clone(),
        levels: a.levels.clone(),
        z: a.z,
        resolution,
        beta: a.beta,
    };
    let maps = dump_bev_features(&model, &opts, &a.out)?;
    for m in &maps {
        info!("{}: max magnitude {:.3e}", m.file_stem(), m.max());
    }
    Ok(())
}

#[derive(Serialize)]
struct DensityEcho<'a> {
    checkpoints: &'a [(String, PathBuf)],
    origin: [f64; 3],
    direction: [f64; 3],
    modality: &'a str,
    t_near: f64,
    t_far: f64,
    samples: usize,
}

fn dump_density(a: DumpDensityArgs) -> Result<()> {
    let named: Vec<(String, PathBuf)> = a
        .checkpoints
        .iter()
        .map(|c| match c.split_once('=') {
            Some((n, p)) => (n.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(c);
                let n = p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or("model")
                    .to_string();
                (n, p)
            }
        })
        .collect();
    let models = named
        .iter()
        .map(|(_, p)| {
            load_model(p)
                .map(|(_, m)| m)
                .with_context(|| format!("loading {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let modality = match a.modality.as_str() {
        "lidar" => Modality::Lidar,
        "camera" => Modality::Camera,
        other => bail!("unknown modality `{other}` (expected lidar or camera)"),
    };
    let ray = match (&a.data, &a.origin, &a.direction) {
        (Some(dir), None, None) => {
            let dataset = Dataset::load(dir)?;
            let index = a
                .ray
                .ok_or_else(|| anyhow!("--ray is required with --data"))?;
            if a.frame >= dataset.frames.len() || index >= dataset.rays_per_frame(modality) {
                bail!("frame {} / ray {index} out of range", a.frame);
            }
            dataset.ray(modality, a.frame, index).ok_or_else(|| {
                anyhow!("ray {index} of frame {} misses the scene bounds", a.frame)
            })?
        }
        (None, Some(o), Some(d)) => {
            if o.len() != 3 || d.len() != 3 {
                bail!("--origin and --direction take three comma-separated values");
            }
            let bounds = models[0].grid_config.bounds;
            Ray::new(
                Vector3::new(o[0], o[1], o[2]),
                Vector3::new(d[0], d[1], d[2]),
                modality,
            )
            .clip(&bounds)
            .ok_or_else(|| anyhow!("ray misses the scene bounds"))?
        }
        _ => bail!("give either --data with --ray, or --origin with --direction"),
    };
    echo(
        &a.out.with_extension("config.json"),
        &DensityEcho {
            checkpoints: &named,
            origin: ray.origin.into(),
            direction: ray.direction.into(),
            modality: modality.name(),
            t_near: ray.t_near,
            t_far: ray.t_far,
            samples: a.samples,
        },
    )?;
    let cols: Vec<(String, &Model)> = named
        .iter()
        .map(|(n, _)| n.clone())
        .zip(models.iter())
        .collect();
    let profile = dump_ray_density(&cols, &ray, a.samples, &a.out)?;
    info!(
        "{} samples x {} models written to {}",
        profile.t.len(),
        cols.len(),
        a.out.display()
    );
    Ok(())
}
