//! Single-document run configuration read by the `train` command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::experiments::ExperimentConfig;
use crate::field::{MlpConfig, ModelSpec};
use crate::grid::GridConfig;
use crate::scene::{apply_knob, street_scene, Dataset, Preset, SceneSpec};
use crate::train::TrainConfig;

/// A generated scene: preset name, `key=value` knobs and generator seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSource {
    pub preset: String,
    #[serde(default)]
    pub knobs: Vec<String>,
    #[serde(default)]
    pub seed: u64,
}

impl SceneSource {
    pub fn scene(&self) -> Result<SceneSpec> {
        let preset: Preset = self.preset.parse()?;
        let mut scene = street_scene(preset);
        for k in &self.knobs {
            apply_knob(&mut scene, k)?;
        }
        scene.validate()?;
        Ok(scene)
    }
}

/// Exactly one of `scene` and `dataset` must be given. `grid` defaults to
/// the desk grid over the scene bounds and `eval` to the training sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scene: Option<SceneSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub mlp: MlpConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalOptions>,
}

impl RunConfig {
    /// Reads `path`; relative dataset and `sgi_init` paths are taken
    /// relative to the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = crate::io::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(d) = &cfg.dataset {
            cfg.dataset = Some(base.join(d));
        }
        if let Some(p) = &cfg.model.sgi_init {
            cfg.model.sgi_init = Some(base.join(p));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scene.is_some() == self.dataset.is_some() {
            return Err(Error::config(
                "config needs exactly one of `scene` and `dataset`",
            ));
        }
        self.train.validate()
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match (&self.scene, &self.dataset) {
            (Some(s), None) => Dataset::generate(&s.scene()?, s.seed),
            (None, Some(d)) => Dataset::load(d),
            _ => Err(Error::config(
                "config needs exactly one of `scene` and `dataset`",
            )),
        }
    }

    /// Copy with every default filled in for `dataset`.
    pub fn resolved(&self, dataset: &Dataset) -> Result<Self> {
        let grid = self
            .grid
            .clone()
            .unwrap_or_else(|| GridConfig::desk(dataset.scene.bounds));
        grid.validate()?;
        self.model.validate(&grid)?;
        Ok(Self {
            grid: Some(grid),
            eval: Some(self.eval.clone().unwrap_or_else(|| {
                EvalOptions::matching(&self.train.sampling, self.train.chunk_rays)
            })),
            ..self.clone()
        })
    }

    pub fn experiment(&self, dataset: &Dataset) -> Result<ExperimentConfig> {
        let r = self.resolved(dataset)?;
        Ok(ExperimentConfig {
            grid: r.grid.expect("resolved"),
            mlp: r.mlp,
            train: r.train,
            eval: r.eval.expect("resolved"),
        })
    }
}
