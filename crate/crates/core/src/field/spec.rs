//! Architecture selection and network sizes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::nn::Activation;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SingleLidar,
    SingleCamera,
    SharedFusion,
    DecompGeometry,
    DecompDensity,
    DecompHash,
    HardConstraint,
    Gaa,
    Sgi,
    Alignmif,
}

impl Architecture {
    pub const ALL: [Architecture; 10] = [
        Architecture::SingleLidar,
        Architecture::SingleCamera,
        Architecture::SharedFusion,
        Architecture::DecompGeometry,
        Architecture::DecompDensity,
        Architecture::DecompHash,
        Architecture::HardConstraint,
        Architecture::Gaa,
        Architecture::Sgi,
        Architecture::Alignmif,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Architecture::SingleLidar => "single_lidar",
            Architecture::SingleCamera => "single_camera",
            Architecture::SharedFusion => "shared_fusion",
            Architecture::DecompGeometry => "decomp_geometry",
            Architecture::DecompDensity => "decomp_density",
            Architecture::DecompHash => "decomp_hash",
            Architecture::HardConstraint => "hard_constraint",
            Architecture::Gaa => "gaa",
            Architecture::Sgi => "sgi",
            Architecture::Alignmif => "alignmif",
        }
    }

    pub fn uses_sgi(self) -> bool {
        matches!(self, Architecture::Sgi | Architecture::Alignmif)
    }

    pub fn uses_mask(self) -> bool {
        matches!(self, Architecture::Gaa | Architecture::Alignmif)
    }

    pub fn has_lidar(self) -> bool {
        self != Architecture::SingleCamera
    }

    pub fn has_camera(self) -> bool {
        self != Architecture::SingleLidar
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::config(format!("unknown architecture `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Concat,
    Add,
    /// Own features, then the cross features scaled by a sigmoid gate
    /// computed from the own features.
    Gated,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgiVariant {
    /// Pretrained base grid plus per-modality residual grids.
    #[default]
    Residual,
    /// One shared grid initialized from the pretrained grid.
    LoadOnly,
    /// As `LoadOnly`, with the grid frozen.
    LoadFrozen,
    /// As `LoadOnly`, with camera losses blocked from the density.
    DetachCameraDensity,
}

fn default_beta() -> f64 {
    8.0
}

fn default_constraint_weight() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Activation horizon of the cross-modality grid (GAA and AlignMiF).
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub fusion: Fusion,
    /// Checkpoint holding the pretrained LiDAR grid.
    #[serde(default)]
    pub sgi_init: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub sgi_trainable: bool,
    #[serde(default)]
    pub sgi_variant: SgiVariant,
    /// Scale of the density agreement term; read only by `hard_constraint`.
    #[serde(default = "default_constraint_weight")]
    pub hard_constraint_weight: f64,
}

impl ModelSpec {
    pub fn new(architecture: Architecture) -> Self {
        Self {
            architecture,
            beta: default_beta(),
            fusion: Fusion::Concat,
            sgi_init: None,
            sgi_trainable: true,
            sgi_variant: SgiVariant::Residual,
            hard_constraint_weight: default_constraint_weight(),
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_fusion(mut self, fusion: Fusion) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn with_sgi_variant(mut self, variant: SgiVariant) -> Self {
        self.sgi_variant = variant;
        self
    }

    pub fn validate(&self, grid: &GridConfig) -> Result<()> {
        if self.architecture.uses_mask() && !(self.beta >= 0.0 && self.beta <= grid.levels as f64) {
            return Err(Error::config(format!(
                "beta {} must lie in [0, {}]",
                self.beta, grid.levels
            )));
        }
        if !(self.hard_constraint_weight >= 0.0 && self.hard_constraint_weight.is_finite()) {
            return Err(Error::config(
                "hard_constraint_weight must be finite and >= 0",
            ));
        }
        if self.sgi_init.is_some() && !self.architecture.uses_sgi() {
            return Err(Error::config(format!(
                "sgi_init given for `{}`, which has no shared initialization",
                self.architecture.name()
            )));
        }
        Ok(())
    }

    /// Short label used in tables and file names.
    pub fn label(&self) -> String {
        match self.architecture {
            Architecture::Gaa => format!("gaa_{}_b{}", fusion_name(self.fusion), self.beta),
            Architecture::Alignmif => {
                format!("alignmif_{}_b{}", fusion_name(self.fusion), self.beta)
            }
            Architecture::Sgi => format!("sgi_{}", sgi_name(self.sgi_variant)),
            a => a.name().to_string(),
        }
    }
}

pub fn fusion_name(f: Fusion) -> &'static str {
    match f {
        Fusion::Concat => "concat",
        Fusion::Add => "add",
        Fusion::Gated => "gated",
    }
}

pub fn sgi_name(v: SgiVariant) -> &'static str {
    match v {
        SgiVariant::Residual => "residual",
        SgiVariant::LoadOnly => "load_only",
        SgiVariant::LoadFrozen => "load_frozen",
        SgiVariant::DetachCameraDensity => "detach_camera_density",
    }
}

/// Hidden widths of the geometry network and of the output heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub geo_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub geo_feature_dim: usize,
    pub activation: Activation,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            geo_hidden: vec![64, 64],
            head_hidden: vec![64, 64],
            geo_feature_dim: 15,
            activation: Activation::Relu,
        }
    }
}

impl MlpConfig {
    pub fn uniform(width: usize, layers: usize) -> Self {
        Self {
            geo_hidden: vec![width; layers],
            head_hidden: vec![width; layers],
            ..Self::default()
        }
    }
}
