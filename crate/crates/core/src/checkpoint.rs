//! Binary checkpoints: a JSON header followed by little-endian `f32` blobs
//! for the parameters and both Adam moments.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{MlpConfig, Model, ModelSpec};
use crate::grid::{Aabb, GridConfig};
use crate::nn::{ParamStore, Segment};
use crate::train::TrainConfig;

const MAGIC: &[u8; 8] = b"MMFCKPT1";

/// Position of a ChaCha stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// Word position, stored as a decimal string to survive JSON intact.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng, seed: u64) -> Self {
        Self {
            seed,
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::config(format!("bad rng word position `{}`", self.word_pos)))?;
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub segment: String,
    pub levels: usize,
    pub feature_dim: usize,
    pub table_size_log2: u32,
    pub base_resolution: u32,
    pub growth_factor: f64,
    pub bounds: Aabb,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model_spec: ModelSpec,
    train_config: TrainConfig,
    grid_config: GridConfig,
    mlp_config: MlpConfig,
    model_seed: u64,
    step: u64,
    rng: Vec<RngState>,
    segments: Vec<Segment>,
    grids: Vec<GridHeader>,
    param_count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_spec: ModelSpec,
    pub train_config: TrainConfig,
    pub grid_config: GridConfig,
    pub mlp_config: MlpConfig,
    /// Seed the model was initialized from.
    pub model_seed: u64,
    pub rng: Vec<RngState>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model,
        train_config: &TrainConfig,
        model_seed: u64,
        rng: Vec<RngState>,
    ) -> Self {
        Self {
            model_spec: model.spec.clone(),
            train_config: train_config.clone(),
            grid_config: model.grid_config.clone(),
            mlp_config: model.mlp_config.clone(),
            model_seed,
            rng,
            params: model.params.clone(),
        }
    }

    pub fn step(&self) -> u64 {
        self.params.step
    }

    fn header(&self) -> Header {
        let g = &self.grid_config;
        let grids = self
            .params
            .segments()
            .iter()
            .filter(|s| s.name.starts_with("grid."))
            .map(|s| GridHeader {
                segment: s.name.clone(),
                levels: g.levels,
                feature_dim: g.feature_dim,
                table_size_log2: g.table_size_log2,
                base_resolution: g.base_resolution,
                growth_factor: g.growth_factor,
                bounds: g.bounds,
            })
            .collect();
        Header {
            model_spec: self.model_spec.clone(),
            train_config: self.train_config.clone(),
            grid_config: self.grid_config.clone(),
            mlp_config: self.mlp_config.clone(),
            model_seed: self.model_seed,
            step: self.params.step,
            rng: self.rng.clone(),
            segments: self.params.segments().to_vec(),
            grids,
            param_count: self.params.len(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let n = self.params.len();
        let mut out = Vec::with_capacity(16 + header.len() + 12 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for blob in [&self.params.values, &self.params.m, &self.params.v] {
            for v in blob.iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        let n = header.param_count;
        let data = &bytes[16 + hlen..];
        if data.len() != 12 * n {
            return Err(bad(&format!(
                "expected {} blob bytes, found {}",
                12 * n,
                data.len()
            )));
        }
        let blob = |k: usize| -> Vec<f64> {
            data[4 * n * k..4 * n * (k + 1)]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        };
        let params =
            ParamStore::from_parts(header.segments, blob(0), blob(1), blob(2), header.step)?;
        Ok(Self {
            model_spec: header.model_spec,
            train_config: header.train_config,
            grid_config: header.grid_config,
            mlp_config: header.mlp_config,
            model_seed: header.model_seed,
            rng: header.rng,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// The grid a shared-geometry initialization is taken from: the LiDAR
    /// grid when present, otherwise the single shared grid.
    pub fn geometry_grid(&self, expected: &GridConfig) -> Result<Vec<f64>> {
        if !self.grid_config.same_geometry(expected) {
            return Err(Error::config(
                "pretrained grid geometry differs from the requested grid",
            ));
        }
        ["grid.lidar", "grid.shared", "grid.init"]
            .iter()
            .find_map(|n| self.params.segment_values(n))
            .map(<[f64]>::to_vec)
            .ok_or_else(|| Error::config("checkpoint holds no usable geometry grid"))
    }

    /// Rebuilds the model with the stored parameters and optimizer state.
    pub fn to_model(&self) -> Result<Model> {
        let sgi = ["grid.init", "grid.shared"]
            .iter()
            .find_map(|n| self.params.segment_values(n))
            .filter(|_| self.model_spec.architecture.uses_sgi());
        let mut model = Model::new(
            self.model_spec.clone(),
            self.grid_config.clone(),
            self.mlp_config.clone(),
            self.model_seed,
            sgi,
        )?;
        if model.params.segments() != self.params.segments() {
            return Err(Error::config(
                "checkpoint segments do not match the model layout",
            ));
        }
        model.params = self.params.clone();
        Ok(model)
    }
}
