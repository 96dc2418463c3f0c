//! Train-and-evaluate drivers for the loss-weight sweep and the ablation
//! suites. Every SGI-based run in one suite shares a single LiDAR
//! pretraining stage.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions, Metrics};
use crate::field::{Architecture, Fusion, MlpConfig, Model, ModelSpec, SgiVariant};
use crate::grid::GridConfig;
use crate::scene::Dataset;
use crate::train::{pretrain_lidar_grid, train, TrainConfig};

pub const DEFAULT_WLAMBDAS: [f64; 5] = [0.1, 0.5, 1.0, 2.0, 5.0];
pub const DEFAULT_BETAS: [f64; 5] = [2.0, 4.0, 8.0, 12.0, 16.0];

/// Everything needed to train and score one model besides its spec.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub mlp: MlpConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
}

impl ExperimentConfig {
    pub fn new(grid: GridConfig, mlp: MlpConfig, train: TrainConfig) -> Self {
        let eval = EvalOptions::matching(&train.sampling, train.chunk_rays);
        Self {
            grid,
            mlp,
            train,
            eval,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub label: String,
    pub architecture: Architecture,
    pub wlambda: f64,
    pub beta: f64,
    pub seed: u64,
    pub metrics: Metrics,
}

pub const TABLE_HEADER: &str =
    "label,architecture,wlambda,beta,seed,psnr,ssim,chamfer,fscore,intensity_mae,depth_rmse";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTable {
    pub rows: Vec<RunRow>,
}

impl RunTable {
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut s = format!("{TABLE_HEADER}\n");
        for r in &self.rows {
            let m = &r.metrics;
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.label,
                r.architecture.name(),
                r.wlambda,
                r.beta,
                r.seed,
                cell(m.psnr),
                cell(m.ssim),
                cell(m.chamfer),
                cell(m.fscore),
                cell(m.intensity_mae),
                cell(m.depth_rmse)
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, label: &str) -> Option<&RunRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Lazily computed LiDAR pretraining table shared by SGI-based runs.
pub struct Pretrained {
    table: Option<Vec<f64>>,
    model: Option<Model>,
}

impl Pretrained {
    pub fn none() -> Self {
        Self {
            table: None,
            model: None,
        }
    }

    pub fn from_table(table: Vec<f64>) -> Self {
        Self {
            table: Some(table),
            model: None,
        }
    }

    /// Reuses the grid of an already trained single-LiDAR model.
    pub fn from_single_lidar(model: &Model) -> Result<Self> {
        let table = model
            .grid_table("lidar")
            .ok_or_else(|| {
                Error::config(format!(
                    "`{}` has no LiDAR grid",
                    model.architecture().name()
                ))
            })?
            .to_vec();
        Ok(Self::from_table(table))
    }

    pub fn table(
        &mut self,
        dataset: &Dataset,
        cfg: &ExperimentConfig,
        out: Option<&Path>,
    ) -> Result<&[f64]> {
        if self.table.is_none() {
            let dir = out.map(|d| d.join("pretrain"));
            let (m, t) =
                pretrain_lidar_grid(&cfg.grid, &cfg.mlp, dataset, &cfg.train, dir.as_deref())?;
            self.table = Some(t);
            self.model = Some(m);
        }
        Ok(self.table.as_deref().expect("filled above"))
    }

    /// The pretraining model, when this instance trained one.
    pub fn model(&self) -> Option<&Model> {
        self.model.as_ref()
    }
}

/// Trains `spec` under `train` and evaluates it. `out` receives the
/// training log and checkpoints.
pub fn train_and_evaluate(
    spec: &ModelSpec,
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
    pretrained: &mut Pretrained,
    out: Option<&Path>,
) -> Result<(Model, Metrics)> {
    let mut model = if spec.architecture.uses_sgi() && spec.sgi_init.is_none() {
        let table = pretrained.table(dataset, cfg, out)?.to_vec();
        Model::new(
            spec.clone(),
            cfg.grid.clone(),
            cfg.mlp.clone(),
            train_cfg.seed,
            Some(&table),
        )?
    } else {
        crate::field::build_model(spec, &cfg.grid, &cfg.mlp, train_cfg.seed)?
    };
    train(&mut model, dataset, train_cfg, out)?;
    let metrics = evaluate(&model, dataset, &cfg.eval)?;
    if let Some(dir) = out {
        metrics.write(&dir.join("metrics.json"))?;
    }
    Ok((model, metrics))
}

/// One planned run of a suite.
#[derive(Clone, Debug, PartialEq)]
pub struct RunPlan {
    pub label: String,
    pub spec: ModelSpec,
    pub wlambda: f64,
}

impl RunPlan {
    fn new(label: impl Into<String>, spec: ModelSpec, wlambda: f64) -> Self {
        Self {
            label: label.into(),
            spec,
            wlambda,
        }
    }
}

/// Runs each plan in order, writing per-run outputs under `out/<label>`.
pub fn run_plans(
    plans: &[RunPlan],
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    pretrained: &mut Pretrained,
    out: Option<&Path>,
) -> Result<RunTable> {
    let mut table = RunTable::default();
    for p in plans {
        let train_cfg = cfg.train.clone().with_wlambda(p.wlambda);
        let dir: Option<PathBuf> = out.map(|d| d.join(&p.label));
        log::info!("training `{}`", p.label);
        let (_, metrics) = train_and_evaluate(
            &p.spec,
            dataset,
            cfg,
            &train_cfg,
            pretrained,
            dir.as_deref(),
        )?;
        log::info!(
            "`{}`: psnr {:?} chamfer {:?}",
            p.label,
            metrics.psnr,
            metrics.chamfer
        );
        table.rows.push(RunRow {
            label: p.label.clone(),
            architecture: p.spec.architecture,
            wlambda: p.wlambda,
            beta: p.spec.beta,
            seed: train_cfg.seed,
            metrics,
        });
    }
    Ok(table)
}

pub fn wlambda_label(w: f64) -> String {
    format!("shared_fusion_w{w}")
}

/// Shared-fusion runs, one per loss-weight ratio.
pub fn wlambda_plans(values: &[f64]) -> Vec<RunPlan> {
    values
        .iter()
        .map(|&w| {
            RunPlan::new(
                wlambda_label(w),
                ModelSpec::new(Architecture::SharedFusion),
                w,
            )
        })
        .collect()
}

pub fn wlambda_sweep(
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    values: &[f64],
    out: Option<&Path>,
) -> Result<RunTable> {
    if values.is_empty() {
        return Err(Error::config("loss-weight sweep needs at least one value"));
    }
    if let Some(bad) = values.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
        return Err(Error::config(format!(
            "loss-weight ratio {bad} must be finite and nonnegative"
        )));
    }
    run_plans(
        &wlambda_plans(values),
        dataset,
        cfg,
        &mut Pretrained::none(),
        out,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Arch,
    Gaa,
    Sgi,
    Levels,
    Wlambda,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Arch,
        Suite::Gaa,
        Suite::Sgi,
        Suite::Levels,
        Suite::Wlambda,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Arch => "arch",
            Suite::Gaa => "gaa",
            Suite::Sgi => "sgi",
            Suite::Levels => "levels",
            Suite::Wlambda => "wlambda",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown suite `{s}` (expected arch, gaa, sgi, levels or wlambda)"
                ))
            })
    }
}

fn single(arch: Architecture) -> RunPlan {
    RunPlan::new(arch.name(), ModelSpec::new(arch), 1.0)
}

/// Runs of a suite with equal loss weights.
pub fn suite_plans(suite: Suite) -> Vec<RunPlan> {
    use Architecture::*;
    match suite {
        Suite::Arch => [
            SingleLidar,
            SingleCamera,
            SharedFusion,
            DecompGeometry,
            DecompDensity,
            DecompHash,
            HardConstraint,
        ]
        .into_iter()
        .map(single)
        .collect(),
        Suite::Gaa => [Fusion::Add, Fusion::Concat, Fusion::Gated]
            .into_iter()
            .map(|f| {
                let spec = ModelSpec::new(Gaa).with_fusion(f);
                RunPlan::new(format!("gaa_{}", crate::field::fusion_name(f)), spec, 1.0)
            })
            .collect(),
        Suite::Sgi => [
            SgiVariant::Residual,
            SgiVariant::LoadOnly,
            SgiVariant::LoadFrozen,
            SgiVariant::DetachCameraDensity,
        ]
        .into_iter()
        .map(|v| {
            let spec = ModelSpec::new(Sgi).with_sgi_variant(v);
            RunPlan::new(format!("sgi_{}", crate::field::sgi_name(v)), spec, 1.0)
        })
        .collect(),
        Suite::Levels => DEFAULT_BETAS
            .iter()
            .map(|&b| {
                RunPlan::new(
                    format!("alignmif_beta{b}"),
                    ModelSpec::new(Alignmif).with_beta(b),
                    1.0,
                )
            })
            .collect(),
        Suite::Wlambda => {
            let mut plans = vec![single(SingleLidar), single(SingleCamera)];
            plans.extend(wlambda_plans(&DEFAULT_WLAMBDAS));
            plans
        }
    }
}

/// Runs `suite` and writes `<suite>.csv` under `out`.
pub fn ablate(
    suite: Suite,
    dataset: &Dataset,
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<RunTable> {
    let mut pretrained = Pretrained::none();
    let table = run_plans(&suite_plans(suite), dataset, cfg, &mut pretrained, out)?;
    if let Some(dir) = out {
        table.write_csv(&dir.join(format!("{}.csv", suite.name())))?;
    }
    Ok(table)
}
