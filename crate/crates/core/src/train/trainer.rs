//! The optimization loop, logging, checkpoints and the SGI pretraining stage.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, RngState};
use crate::error::{Error, Result};
use crate::field::{build_model, Architecture, MlpConfig, Model, ModelSpec};
use crate::grid::GridConfig;
use crate::nn::adam_step;
use crate::render::Modality;
use crate::scene::Dataset;
use crate::train::pipeline::{compute_gradients, LossBreakdown};
use crate::train::{batch_sizes, make_batch, TrainConfig};

/// Generator streams of a run: batch draws and sample jitter, per modality.
#[derive(Clone, Debug)]
pub struct RngSet {
    pub seed: u64,
    pub lidar_batch: ChaCha8Rng,
    pub camera_batch: ChaCha8Rng,
    pub lidar_samples: ChaCha8Rng,
    pub camera_samples: ChaCha8Rng,
}

impl RngSet {
    pub fn new(seed: u64) -> Self {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Self {
            seed,
            lidar_batch: stream(1),
            camera_batch: stream(2),
            lidar_samples: stream(3),
            camera_samples: stream(4),
        }
    }

    pub fn capture(&self) -> Vec<RngState> {
        [
            &self.lidar_batch,
            &self.camera_batch,
            &self.lidar_samples,
            &self.camera_samples,
        ]
        .iter()
        .map(|r| RngState::capture(r, self.seed))
        .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainReport {
    pub fn first_loss(&self) -> Option<&LossBreakdown> {
        self.log.first().map(|r| &r.loss)
    }

    pub fn last_loss(&self) -> Option<&LossBreakdown> {
        self.log.last().map(|r| &r.loss)
    }
}

pub const LOG_HEADER: &str = "step,total,rgb,depth,intensity,drop,constraint";

fn write_log(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::from(LOG_HEADER);
    text.push('\n');
    for r in rows {
        let l = &r.loss;
        text.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.step, l.total, l.rgb, l.depth, l.intensity, l.drop, l.constraint
        ));
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Runs `config.iterations` optimizer steps on `model`. With `out`, writes
/// `train_log.csv`, periodic `checkpoint_<step>.bin` files and `final.bin`.
pub fn train(
    model: &mut Model,
    dataset: &Dataset,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    if let Some(dir) = out {
        crate::io::create_dir(dir)?;
    }
    let sizes = batch_sizes(
        config,
        model.supports(Modality::Lidar),
        model.supports(Modality::Camera),
    );
    if sizes == (0, 0) {
        return Err(Error::config(format!(
            "`{}` receives no rays with lambda_l={} and lambda_c={}",
            model.architecture().name(),
            config.lambda_l,
            config.lambda_c
        )));
    }
    let mut rngs = RngSet::new(config.seed);
    let mut report = TrainReport::default();
    model.params.zero_grad();
    for step in 0..config.iterations {
        let lr = config.lr.lr(step, config.iterations);
        let batch = make_batch(
            dataset,
            sizes,
            &mut rngs.lidar_batch,
            &mut rngs.camera_batch,
        )?;
        let loss = compute_gradients(
            model,
            &batch,
            config,
            &mut rngs.lidar_samples,
            &mut rngs.camera_samples,
            step as u64,
        )?;
        adam_step(&mut model.params, lr, &config.adam)?;
        if step % config.log_interval == 0 || step + 1 == config.iterations {
            log::debug!("step {step}: {loss}");
            report.log.push(LogRow { step, lr, loss });
        }
        if let Some(dir) = out {
            if config.checkpoint_interval > 0
                && (step + 1) % config.checkpoint_interval == 0
                && step + 1 < config.iterations
            {
                let p = dir.join(format!("checkpoint_{:06}.bin", step + 1));
                Checkpoint::from_model(model, config, model.seed, rngs.capture()).save(&p)?;
                report.checkpoints.push(p);
            }
        }
    }
    if let Some(dir) = out {
        write_log(&dir.join("train_log.csv"), &report.log)?;
        let p = dir.join("final.bin");
        Checkpoint::from_model(model, config, model.seed, rngs.capture()).save(&p)?;
        report.checkpoints.push(p);
    }
    Ok(report)
}

/// Configuration of the LiDAR pretraining stage for SGI-based models.
pub fn pretrain_config(config: &TrainConfig) -> TrainConfig {
    TrainConfig {
        iterations: config.pretrain_iterations.unwrap_or(config.iterations),
        checkpoint_interval: 0,
        ..config.clone()
    }
}

/// Trains a single-LiDAR field and returns its grid table.
pub fn pretrain_lidar_grid(
    grid: &GridConfig,
    mlp: &MlpConfig,
    dataset: &Dataset,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<(Model, Vec<f64>)> {
    let cfg = pretrain_config(config);
    let mut m = Model::new(
        ModelSpec::new(Architecture::SingleLidar),
        grid.clone(),
        mlp.clone(),
        cfg.seed,
        None,
    )?;
    train(&mut m, dataset, &cfg, out)?;
    let table = m
        .grid_table("lidar")
        .expect("single LiDAR model has a LiDAR grid")
        .to_vec();
    Ok((m, table))
}

/// Builds the model for `spec`; SGI-based specs without `sgi_init` get a
/// LiDAR pretraining stage first (written under `out/pretrain`).
pub fn prepare_model(
    spec: &ModelSpec,
    grid: &GridConfig,
    mlp: &MlpConfig,
    dataset: &Dataset,
    config: &TrainConfig,
    out: Option<&Path>,
) -> Result<Model> {
    if spec.architecture.uses_sgi() && spec.sgi_init.is_none() {
        let dir = out.map(|d| d.join("pretrain"));
        let (_, table) = pretrain_lidar_grid(grid, mlp, dataset, config, dir.as_deref())?;
        return Model::new(
            spec.clone(),
            grid.clone(),
            mlp.clone(),
            config.seed,
            Some(&table),
        );
    }
    build_model(spec, grid, mlp, config.seed)
}
