//! Training hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::AdamConfig;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub depth: f64,
    pub intensity: f64,
    pub drop: f64,
    pub rgb: f64,
    /// Multiplies the model's own hard-constraint weight.
    pub hard_constraint: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            depth: 1.0,
            intensity: 0.1,
            drop: 0.1,
            rgb: 1.0,
            hard_constraint: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    /// Multiply by `factor` once `fraction` of the iterations are done.
    Step {
        initial: f64,
        fraction: f64,
        factor: f64,
    },
    /// Multiply by `factor` every 1000 steps, continuously.
    Exponential { initial: f64, factor_per_1k: f64 },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Step {
            initial: 1e-2,
            fraction: 0.8,
            factor: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn lr(&self, step: usize, iterations: usize) -> f64 {
        match *self {
            LrSchedule::Step {
                initial,
                fraction,
                factor,
            } => {
                if (step as f64) >= fraction * iterations as f64 {
                    initial * factor
                } else {
                    initial
                }
            }
            LrSchedule::Exponential {
                initial,
                factor_per_1k,
            } => initial * factor_per_1k.powf(step as f64 / 1000.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub coarse: usize,
    pub fine: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            coarse: 128,
            fine: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_l: f64,
    pub lambda_c: f64,
    /// Rays drawn per modality per step.
    pub rays_per_step: usize,
    pub iterations: usize,
    pub lr: LrSchedule,
    pub seed: u64,
    pub loss_weights: LossWeights,
    /// Write a checkpoint every this many steps; 0 keeps only the final one.
    pub checkpoint_interval: usize,
    pub log_interval: usize,
    pub sampling: SamplingConfig,
    /// Rays per gradient chunk; fixes the reduction order.
    pub chunk_rays: usize,
    pub adam: AdamConfig,
    /// Iterations of the LiDAR pretraining stage for SGI models without a
    /// given initialization; `None` uses `iterations`.
    pub pretrain_iterations: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_l: 1.0,
            lambda_c: 1.0,
            rays_per_step: 1024,
            iterations: 2000,
            lr: LrSchedule::default(),
            seed: 0,
            loss_weights: LossWeights::default(),
            checkpoint_interval: 0,
            log_interval: 100,
            sampling: SamplingConfig::default(),
            chunk_rays: 64,
            adam: AdamConfig::default(),
            pretrain_iterations: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l >= 0.0 && self.lambda_c >= 0.0 && self.lambda_l + self.lambda_c > 0.0) {
            return Err(Error::config(
                "lambda_l and lambda_c must be >= 0 with a positive sum",
            ));
        }
        if self.rays_per_step == 0 || self.chunk_rays == 0 || self.log_interval == 0 {
            return Err(Error::config(
                "rays_per_step, chunk_rays and log_interval must be positive",
            ));
        }
        if self.sampling.coarse < 2 {
            return Err(Error::config("at least two coarse samples per ray"));
        }
        Ok(())
    }

    /// Sets `lambda_c / lambda_l = w` with `lambda_l = 1`.
    pub fn with_wlambda(mut self, w: f64) -> Self {
        self.lambda_l = 1.0;
        self.lambda_c = w;
        self
    }
}
