//! Encoder and MLP assembly for every architecture.

use std::ops::Range;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::spec::{Architecture, Fusion, MlpConfig, ModelSpec, SgiVariant};
use crate::grid::{GridConfig, GridLayout, LevelMask};
use crate::nn::{
    GridBinding, LinearLayer, Mlp, MlpSpec, NodeId, OutputActivation, ParamStore, Tape, Unary,
};
use crate::render::rays::{encode_direction, DIRECTION_DIM, DIRECTION_OCTAVES};
use crate::render::Modality;

pub use crate::nn::mlp::DENSITY_CLAMP;

/// A point query against the field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldQuery {
    pub position: [f64; 3],
    pub direction: Vector3<f64>,
    pub modality: Modality,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldResponse {
    pub sigma: f64,
    pub geometry_feature: Vec<f64>,
    pub color: Option<[f64; 3]>,
    pub intensity: Option<f64>,
    pub drop_prob: Option<f64>,
}

/// Tape nodes produced for one modality over a batch of sample points.
#[derive(Clone, Copy, Debug)]
pub struct BranchNodes {
    /// `N x 1` densities.
    pub sigma: NodeId,
    /// `N x 3` colors or `N x 2` (intensity, drop), absent in density-only passes.
    pub attrs: Option<NodeId>,
    /// Weighted `sum |sigma_own - sigma_other|` for the hard-constraint model.
    pub constraint: Option<NodeId>,
}

#[derive(Clone, Debug, Default)]
struct Grids {
    lidar: Option<GridBinding>,
    camera: Option<GridBinding>,
    shared: Option<GridBinding>,
    init: Option<GridBinding>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ModelSpec,
    pub grid_config: GridConfig,
    pub mlp_config: MlpConfig,
    pub params: ParamStore,
    /// Seed the per-segment initialization streams derive from.
    pub seed: u64,
    layout: Arc<GridLayout>,
    grids: Grids,
    geo_lidar: Option<Mlp>,
    geo_camera: Option<Mlp>,
    geo_shared: Option<Mlp>,
    head_lidar: Option<Mlp>,
    head_color: Option<Mlp>,
    gate: Option<LinearLayer>,
}

/// 64-bit FNV-1a, used to give every named segment its own init stream.
pub fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn segment_rng(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ name_hash(name))
}

/// Builds a model, loading the pretrained grid from `spec.sgi_init` when
/// the architecture needs one.
pub fn build_model(
    spec: &ModelSpec,
    grid_config: &GridConfig,
    mlp_config: &MlpConfig,
    seed: u64,
) -> Result<Model> {
    let init = if spec.architecture.uses_sgi() {
        let path = spec
            .sgi_init
            .as_ref()
            .ok_or_else(|| Error::MissingSgiInit(spec.architecture.name().to_string()))?;
        let ckpt = crate::checkpoint::Checkpoint::load(path)?;
        Some(ckpt.geometry_grid(grid_config)?)
    } else {
        None
    };
    Model::new(
        spec.clone(),
        grid_config.clone(),
        mlp_config.clone(),
        seed,
        init.as_deref(),
    )
}

impl Model {
    /// `sgi_table` seeds the pretrained grid of SGI-based architectures and
    /// must be present for them.
    pub fn new(
        spec: ModelSpec,
        grid_config: GridConfig,
        mlp_config: MlpConfig,
        seed: u64,
        sgi_table: Option<&[f64]>,
    ) -> Result<Self> {
        spec.validate(&grid_config)?;
        if mlp_config.geo_feature_dim == 0 {
            return Err(Error::config("geo_feature_dim must be positive"));
        }
        let arch = spec.architecture;
        if arch.uses_sgi() {
            match sgi_table {
                None => return Err(Error::MissingSgiInit(arch.name().to_string())),
                Some(t) if t.len() != grid_config.param_count() => {
                    return Err(Error::config(format!(
                        "pretrained grid has {} entries, expected {}",
                        t.len(),
                        grid_config.param_count()
                    )))
                }
                _ => {}
            }
        }
        let layout = Arc::new(GridLayout::new(grid_config.clone())?);
        let mut params = ParamStore::new();
        let mut grids = Grids::default();

        let add_grid =
            |params: &mut ParamStore, name: &str, table: Option<&[f64]>, trainable: bool| {
                let values = match table {
                    Some(t) => t.to_vec(),
                    None => layout.init_table(&mut segment_rng(seed, name)),
                };
                GridBinding {
                    offset: params.push_segment(name, values, trainable),
                    layout: Arc::clone(&layout),
                }
            };
        let sgi_trainable = spec.sgi_trainable && spec.sgi_variant != SgiVariant::LoadFrozen;
        match arch {
            Architecture::SingleLidar => {
                grids.lidar = Some(add_grid(&mut params, "grid.lidar", None, true))
            }
            Architecture::SingleCamera => {
                grids.camera = Some(add_grid(&mut params, "grid.camera", None, true))
            }
            Architecture::SharedFusion
            | Architecture::DecompGeometry
            | Architecture::DecompDensity
            | Architecture::HardConstraint => {
                grids.shared = Some(add_grid(&mut params, "grid.shared", None, true))
            }
            Architecture::DecompHash | Architecture::Gaa => {
                grids.lidar = Some(add_grid(&mut params, "grid.lidar", None, true));
                grids.camera = Some(add_grid(&mut params, "grid.camera", None, true));
            }
            Architecture::Sgi if spec.sgi_variant != SgiVariant::Residual => {
                grids.shared = Some(add_grid(
                    &mut params,
                    "grid.shared",
                    sgi_table,
                    sgi_trainable,
                ));
            }
            Architecture::Sgi | Architecture::Alignmif => {
                grids.init = Some(add_grid(&mut params, "grid.init", sgi_table, sgi_trainable));
                grids.lidar = Some(add_grid(&mut params, "grid.lidar", None, true));
                grids.camera = Some(add_grid(&mut params, "grid.camera", None, true));
            }
        }

        let enc = grid_config.output_dim();
        let fused = match (arch.uses_mask(), spec.fusion) {
            (true, Fusion::Add) | (false, _) => enc,
            (true, _) => 2 * enc,
        };
        let feat = mlp_config.geo_feature_dim;
        let widths = |input: usize, hidden: &[usize], out: usize| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(out);
            w
        };
        let add_mlp = |params: &mut ParamStore, name: &str, spec: MlpSpec| -> Result<Mlp> {
            let values = Mlp::init(&spec, &mut segment_rng(seed, name));
            let offset = params.push_segment(name, values, true);
            Mlp::new(spec, offset)
        };
        let geo_spec = |outputs: usize| {
            MlpSpec::new(
                widths(fused, &mlp_config.geo_hidden, outputs + feat),
                mlp_config.activation,
                OutputActivation::None,
            )
        };

        let (mut geo_lidar, mut geo_camera, mut geo_shared) = (None, None, None);
        match arch {
            Architecture::SingleLidar => {
                geo_lidar = Some(add_mlp(&mut params, "geo.lidar", geo_spec(1))?)
            }
            Architecture::SingleCamera => {
                geo_camera = Some(add_mlp(&mut params, "geo.camera", geo_spec(1))?)
            }
            Architecture::DecompGeometry
            | Architecture::HardConstraint
            | Architecture::DecompHash => {
                geo_lidar = Some(add_mlp(&mut params, "geo.lidar", geo_spec(1))?);
                geo_camera = Some(add_mlp(&mut params, "geo.camera", geo_spec(1))?);
            }
            Architecture::DecompDensity => {
                geo_shared = Some(add_mlp(&mut params, "geo.shared", geo_spec(2))?)
            }
            _ => geo_shared = Some(add_mlp(&mut params, "geo.shared", geo_spec(1))?),
        }

        let mut gate = None;
        if arch.uses_mask() && spec.fusion == Fusion::Gated {
            let gspec = MlpSpec::new(
                vec![enc, enc],
                mlp_config.activation,
                OutputActivation::None,
            );
            let mlp = add_mlp(&mut params, "gate", gspec)?;
            gate = Some(mlp.layers()[0]);
        }

        let head_in = feat + DIRECTION_DIM;
        let head_lidar = if arch.has_lidar() {
            Some(add_mlp(
                &mut params,
                "head.lidar",
                MlpSpec::new(
                    widths(head_in, &mlp_config.head_hidden, 2),
                    mlp_config.activation,
                    OutputActivation::Sigmoid,
                ),
            )?)
        } else {
            None
        };
        let head_color = if arch.has_camera() {
            Some(add_mlp(
                &mut params,
                "head.color",
                MlpSpec::new(
                    widths(head_in, &mlp_config.head_hidden, 3),
                    mlp_config.activation,
                    OutputActivation::Sigmoid,
                ),
            )?)
        } else {
            None
        };

        Ok(Self {
            spec,
            grid_config,
            mlp_config,
            params,
            seed,
            layout,
            grids,
            geo_lidar,
            geo_camera,
            geo_shared,
            head_lidar,
            head_color,
            gate,
        })
    }

    pub fn architecture(&self) -> Architecture {
        self.spec.architecture
    }

    pub fn layout(&self) -> &Arc<GridLayout> {
        &self.layout
    }

    pub fn supports(&self, modality: Modality) -> bool {
        match modality {
            Modality::Lidar => self.head_lidar.is_some(),
            Modality::Camera => self.head_color.is_some(),
        }
    }

    /// Width of the geometry-network input.
    pub fn geometry_input_dim(&self) -> usize {
        self.geo_for(Modality::Lidar)
            .or_else(|_| self.geo_for(Modality::Camera))
            .map(|m| m.spec.input_dim())
            .unwrap_or(0)
    }

    /// Grid binding by short name: `lidar`, `camera`, `shared` or `init`.
    pub fn grid(&self, name: &str) -> Option<&GridBinding> {
        match name {
            "lidar" => self.grids.lidar.as_ref(),
            "camera" => self.grids.camera.as_ref(),
            "shared" => self.grids.shared.as_ref(),
            "init" => self.grids.init.as_ref(),
            _ => None,
        }
    }

    pub fn grid_names(&self) -> Vec<&'static str> {
        ["init", "shared", "lidar", "camera"]
            .into_iter()
            .filter(|n| self.grid(n).is_some())
            .collect()
    }

    fn own_grid(&self, modality: Modality) -> Result<&GridBinding> {
        let g = match modality {
            Modality::Lidar => self.grids.lidar.as_ref(),
            Modality::Camera => self.grids.camera.as_ref(),
        };
        g.ok_or(Error::MissingHead(head_name(modality)))
    }

    fn geo_for(&self, modality: Modality) -> Result<&Mlp> {
        let own = match modality {
            Modality::Lidar => self.geo_lidar.as_ref(),
            Modality::Camera => self.geo_camera.as_ref(),
        };
        own.or(self.geo_shared.as_ref())
            .ok_or(Error::MissingHead(head_name(modality)))
    }

    fn head_for(&self, modality: Modality) -> Result<&Mlp> {
        match modality {
            Modality::Lidar => self.head_lidar.as_ref(),
            Modality::Camera => self.head_color.as_ref(),
        }
        .ok_or(Error::MissingHead(head_name(modality)))
    }

    fn encode(
        &self,
        tape: &mut Tape,
        params: &[f64],
        grid: &GridBinding,
        points: &Arc<Vec<[f64; 3]>>,
        mask: Option<LevelMask>,
    ) -> NodeId {
        tape.encode(params, grid, points, mask)
    }

    fn fuse(&self, tape: &mut Tape, params: &[f64], own: NodeId, cross: NodeId) -> Result<NodeId> {
        match self.spec.fusion {
            Fusion::Concat => tape.concat(own, cross),
            Fusion::Add => tape.add(own, cross),
            Fusion::Gated => {
                let layer = self
                    .gate
                    .ok_or_else(|| Error::config("gated fusion without gate layer"))?;
                let g = tape.linear(params, own, layer)?;
                let g = tape.unary(g, Unary::Sigmoid);
                let scaled = tape.mul(g, cross)?;
                tape.concat(own, scaled)
            }
        }
    }

    /// Geometry-network input for `modality` at every point.
    pub fn features(
        &self,
        tape: &mut Tape,
        params: &[f64],
        modality: Modality,
        points: &Arc<Vec<[f64; 3]>>,
    ) -> Result<NodeId> {
        if !self.supports(modality) {
            return Err(Error::MissingHead(head_name(modality)));
        }
        let mask = Some(LevelMask::new(self.spec.beta));
        fn shared(g: &Option<GridBinding>) -> Result<&GridBinding> {
            g.as_ref()
                .ok_or_else(|| Error::config("missing shared grid"))
        }
        Ok(match self.spec.architecture {
            Architecture::SingleLidar | Architecture::SingleCamera | Architecture::DecompHash => {
                self.encode(tape, params, self.own_grid(modality)?, points, None)
            }
            Architecture::SharedFusion
            | Architecture::DecompGeometry
            | Architecture::DecompDensity
            | Architecture::HardConstraint => {
                self.encode(tape, params, shared(&self.grids.shared)?, points, None)
            }
            Architecture::Sgi => match &self.grids.init {
                Some(init) => {
                    let base = self.encode(tape, params, init, points, None);
                    let res = self.encode(tape, params, self.own_grid(modality)?, points, None);
                    tape.add(base, res)?
                }
                None => self.encode(tape, params, shared(&self.grids.shared)?, points, None),
            },
            Architecture::Gaa => {
                let own = self.encode(tape, params, self.own_grid(modality)?, points, None);
                let cross =
                    self.encode(tape, params, self.own_grid(modality.other())?, points, mask);
                self.fuse(tape, params, own, cross)?
            }
            Architecture::Alignmif => {
                let init = shared(&self.grids.init)?;
                let base = self.encode(tape, params, init, points, None);
                let own_res = self.encode(tape, params, self.own_grid(modality)?, points, None);
                let cross_res =
                    self.encode(tape, params, self.own_grid(modality.other())?, points, mask);
                let own = tape.add(base, own_res)?;
                let cross = tape.add(base, cross_res)?;
                self.fuse(tape, params, own, cross)?
            }
        })
    }

    /// Records the field for `modality` over `points` on the tape.
    /// `directions` holds one encoded view direction (`DIRECTION_DIM` wide)
    /// per point and is required unless `density_only`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &[f64],
        modality: Modality,
        points: &Arc<Vec<[f64; 3]>>,
        directions: Option<Vec<f64>>,
        density_only: bool,
        constraint_weight: f64,
    ) -> Result<BranchNodes> {
        let rows = points.len();
        let x = self.features(tape, params, modality, points)?;
        let geo = self.geo_for(modality)?;
        let out = geo.forward(tape, params, x)?;
        let (n_sigma, sigma_col) = match self.spec.architecture {
            Architecture::DecompDensity => (
                2,
                match modality {
                    Modality::Lidar => 0,
                    Modality::Camera => 1,
                },
            ),
            _ => (1, 0),
        };
        let raw = tape.columns(out, sigma_col, 1)?;
        let mut sigma = tape.unary(raw, Unary::ExpClamp(DENSITY_CLAMP));

        let mut constraint = None;
        if self.spec.architecture == Architecture::HardConstraint
            && !density_only
            && constraint_weight > 0.0
        {
            let other = self.geo_for(modality.other())?;
            let o = other.forward(tape, params, x)?;
            let o = tape.columns(o, 0, 1)?;
            let o = tape.unary(o, Unary::ExpClamp(DENSITY_CLAMP));
            constraint = Some(tape.abs_diff_sum(sigma, o, constraint_weight)?);
        }
        if self.spec.architecture == Architecture::Sgi
            && self.spec.sgi_variant == SgiVariant::DetachCameraDensity
            && modality == Modality::Camera
        {
            sigma = tape.unary(sigma, Unary::Detach);
        }
        if density_only {
            return Ok(BranchNodes {
                sigma,
                attrs: None,
                constraint,
            });
        }
        let dirs = directions
            .ok_or_else(|| Error::config("view directions required for a full forward"))?;
        if dirs.len() != rows * DIRECTION_DIM {
            return Err(Error::Shape(format!(
                "{} direction entries for {rows} points",
                dirs.len()
            )));
        }
        let feat = tape.columns(out, n_sigma, self.mlp_config.geo_feature_dim)?;
        let d = tape.leaf(rows, DIRECTION_DIM, dirs);
        let head_in = tape.concat(feat, d)?;
        let attrs = self.head_for(modality)?.forward(tape, params, head_in)?;
        Ok(BranchNodes {
            sigma,
            attrs: Some(attrs),
            constraint,
        })
    }

    /// Densities of `modality` at `points` using the current parameters.
    pub fn density(&self, modality: Modality, points: &Arc<Vec<[f64; 3]>>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.forward(
            &mut tape,
            &self.params.values,
            modality,
            points,
            None,
            true,
            0.0,
        )?;
        Ok(tape.value(b.sigma).to_vec())
    }

    /// Density under both geometry paths of a decomposed model at `points`:
    /// `(sigma_lidar, sigma_camera)`.
    pub fn paired_density(&self, points: &Arc<Vec<[f64; 3]>>) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((
            self.density(Modality::Lidar, points)?,
            self.density(Modality::Camera, points)?,
        ))
    }

    pub fn query_field(&self, query: &FieldQuery) -> Result<FieldResponse> {
        let mut tape = Tape::new();
        let points = Arc::new(vec![query.position]);
        let mut dirs = Vec::with_capacity(DIRECTION_DIM);
        encode_direction(&query.direction.normalize(), DIRECTION_OCTAVES, &mut dirs);
        let b = self.forward(
            &mut tape,
            &self.params.values,
            query.modality,
            &points,
            Some(dirs),
            false,
            0.0,
        )?;
        let attrs = tape.value(b.attrs.expect("full forward")).to_vec();
        let x = self.features(&mut tape, &self.params.values, query.modality, &points)?;
        let out = self
            .geo_for(query.modality)?
            .forward(&mut tape, &self.params.values, x)?;
        let n_sigma = if self.spec.architecture == Architecture::DecompDensity {
            2
        } else {
            1
        };
        let geometry_feature = tape.value(out)[n_sigma..].to_vec();
        let mut r = FieldResponse {
            sigma: tape.value(b.sigma)[0],
            geometry_feature,
            color: None,
            intensity: None,
            drop_prob: None,
        };
        match query.modality {
            Modality::Camera => r.color = Some([attrs[0], attrs[1], attrs[2]]),
            Modality::Lidar => {
                r.intensity = Some(attrs[0]);
                r.drop_prob = Some(attrs[1]);
            }
        }
        Ok(r)
    }

    /// Parameter ranges that only `modality`'s loss can reach.
    pub fn exclusive_ranges(&self, modality: Modality) -> Vec<Range<usize>> {
        let seg = |name: &str| self.params.segment(name).map(|s| s.range());
        let (m, head) = match modality {
            Modality::Lidar => ("lidar", "head.lidar"),
            Modality::Camera => ("camera", "head.color"),
        };
        let mut out: Vec<Range<usize>> = Vec::new();
        match self.spec.architecture {
            Architecture::SingleLidar | Architecture::SingleCamera => {
                if self.supports(modality) {
                    out.push(0..self.params.len());
                }
                return out;
            }
            Architecture::DecompGeometry | Architecture::HardConstraint => {
                out.extend(seg(&format!("geo.{m}")));
            }
            Architecture::DecompHash => {
                out.extend(seg(&format!("grid.{m}")));
                out.extend(seg(&format!("geo.{m}")));
            }
            Architecture::DecompDensity => {
                let geo = self
                    .geo_shared
                    .as_ref()
                    .expect("decomposed density has a shared geometry net");
                let last = *geo.layers().last().unwrap();
                let row = match modality {
                    Modality::Lidar => 0,
                    Modality::Camera => 1,
                };
                let w = last.weight + row * last.in_dim;
                out.push(w..w + last.in_dim);
                out.push(last.bias + row..last.bias + row + 1);
            }
            _ => {}
        }
        out.extend(seg(head));
        out
    }

    /// Flat table of a grid by short name.
    pub fn grid_table(&self, name: &str) -> Option<&[f64]> {
        self.grid(name)
            .map(|g| &self.params.values[g.offset..g.offset + self.grid_config.param_count()])
    }

    /// Densities along a ray at evenly spaced `t` values.
    pub fn density_profile(
        &self,
        modality: Modality,
        origin: Vector3<f64>,
        dir: Vector3<f64>,
        t: &[f64],
    ) -> Result<Vec<f64>> {
        let pts: Vec<[f64; 3]> = t.iter().map(|&t| (origin + dir * t).into()).collect();
        self.density(modality, &Arc::new(pts))
    }

    /// Replaces every parameter with a draw from `U[-scale, scale]`.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params
            .values
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-scale..scale));
    }
}

fn head_name(m: Modality) -> &'static str {
    match m {
        Modality::Lidar => "lidar",
        Modality::Camera => "color",
    }
}

/// `weight * mean |sigma_l - sigma_c|`.
pub fn hard_constraint_loss(sigma_lidar: &[f64], sigma_camera: &[f64], weight: f64) -> Result<f64> {
    if sigma_lidar.len() != sigma_camera.len() {
        return Err(Error::Shape("density lists differ in length".into()));
    }
    if sigma_lidar.is_empty() || weight == 0.0 {
        return Ok(0.0);
    }
    let sum: f64 = sigma_lidar
        .iter()
        .zip(sigma_camera)
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(weight * sum / sigma_lidar.len() as f64)
}
