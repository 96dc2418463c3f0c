//! Read-only probes of trained fields: top-down feature magnitude maps of
//! a hash grid and density profiles along a ray.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::Model;
use crate::grid::LevelMask;
use crate::io;
use crate::render::Ray;

#[derive(Clone, Debug, PartialEq)]
pub struct BevOptions {
    /// Grid name: `lidar`, `camera`, `shared` or `init`.
    pub grid: String,
    /// 1-based levels.
    pub levels: Vec<usize>,
    pub z: f64,
    /// Lattice cells along x and y.
    pub resolution: [usize; 2],
    /// Applies the level mask with this `beta` before taking magnitudes.
    pub beta: Option<f64>,
}

/// Per-cell L2 feature norm of one level; row 0 is the largest y.
#[derive(Clone, Debug, PartialEq)]
pub struct BevMap {
    pub grid: String,
    pub level: usize,
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<f64>,
    /// World `(x, y)` of every cell center, same order as `magnitude`.
    pub centers: Vec<[f64; 2]>,
}

impl BevMap {
    pub fn max(&self) -> f64 {
        self.magnitude.iter().copied().fold(0.0, f64::max)
    }

    /// Magnitudes scaled to `[0, 1]` by the level maximum.
    pub fn normalized(&self) -> Vec<f64> {
        let m = self.max();
        if m > 0.0 {
            self.magnitude.iter().map(|v| v / m).collect()
        } else {
            vec![0.0; self.magnitude.len()]
        }
    }

    pub fn file_stem(&self) -> String {
        format!("bev_{}_{}", self.grid, self.level)
    }
}

pub fn bev_features(model: &Model, opts: &BevOptions) -> Result<Vec<BevMap>> {
    let binding = model.grid(&opts.grid).ok_or_else(|| {
        Error::config(format!(
            "model `{}` has no grid `{}` (available: {})",
            model.architecture().name(),
            opts.grid,
            model.grid_names().join(", ")
        ))
    })?;
    let layout = &binding.layout;
    let table = &model.params.values[binding.offset..binding.offset + layout.config.param_count()];
    let [w, h] = opts.resolution;
    if w == 0 || h == 0 {
        return Err(Error::config("feature map resolution must be positive"));
    }
    if let Some(&bad) = opts.levels.iter().find(|&&l| l == 0 || l > layout.levels()) {
        return Err(Error::config(format!(
            "level {bad} outside 1..={}",
            layout.levels()
        )));
    }
    let b = &layout.config.bounds;
    let centers: Vec<[f64; 2]> = (0..h)
        .flat_map(|row| {
            let y = b.max[1] - (row as f64 + 0.5) / h as f64 * b.extent(1);
            (0..w).map(move |col| [b.min[0] + (col as f64 + 0.5) / w as f64 * b.extent(0), y])
        })
        .collect();
    let mask = opts.beta.map(LevelMask::new);
    Ok(opts
        .levels
        .iter()
        .map(|&level| {
            let scale = mask.map_or(1.0, |m| m.weight(level));
            let magnitude = centers
                .par_iter()
                .map(|c| {
                    let f = layout.interpolate([c[0], c[1], opts.z], level, table);
                    scale * f.iter().map(|v| v * v).sum::<f64>().sqrt()
                })
                .collect();
            BevMap {
                grid: opts.grid.clone(),
                level,
                width: w,
                height: h,
                magnitude,
                centers: centers.clone(),
            }
        })
        .collect())
}

/// Writes `bev_<grid>_<level>.ppm` (normalized grayscale) and `.f32` (raw
/// magnitudes) for every requested level.
pub fn dump_bev_features(model: &Model, opts: &BevOptions, dir: &Path) -> Result<Vec<BevMap>> {
    let maps = bev_features(model, opts)?;
    io::create_dir(dir)?;
    for m in &maps {
        let stem = m.file_stem();
        io::write_ppm_gray(
            &dir.join(format!("{stem}.ppm")),
            m.width,
            m.height,
            &m.normalized(),
        )?;
        io::write_f32(&dir.join(format!("{stem}.f32")), &m.magnitude)?;
    }
    Ok(maps)
}

/// Densities of several models on a shared uniform grid of ray positions.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityProfile {
    pub names: Vec<String>,
    pub t: Vec<f64>,
    /// One column per model.
    pub sigma: Vec<Vec<f64>>,
}

impl DensityProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t");
        for n in &self.names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for (i, t) in self.t.iter().enumerate() {
            s.push_str(&t.to_string());
            for col in &self.sigma {
                s.push(',');
                s.push_str(&col[i].to_string());
            }
            s.push('\n');
        }
        s
    }

    /// Index of the largest density in column `model`.
    pub fn argmax(&self, model: usize) -> Option<usize> {
        self.sigma
            .get(model)?
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }
}

/// `n` bin midpoints over `[ray.t_near, ray.t_far]`. Each model is queried
/// through the ray's modality when it renders it, else through its other
/// modality.
pub fn ray_density(models: &[(String, &Model)], ray: &Ray, n: usize) -> Result<DensityProfile> {
    if n == 0 {
        return Err(Error::config("density profile needs at least one sample"));
    }
    if !(ray.t_far.is_finite() && ray.t_far > ray.t_near) {
        return Err(Error::config("ray has an empty or unbounded extent"));
    }
    let t = crate::render::midpoint_samples(ray.t_near, ray.t_far, n);
    let sigma = models
        .iter()
        .map(|(_, m)| {
            let modality = if m.supports(ray.modality) {
                ray.modality
            } else {
                ray.modality.other()
            };
            m.density_profile(modality, ray.origin, ray.direction, &t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DensityProfile {
        names: models.iter().map(|(n, _)| n.clone()).collect(),
        t,
        sigma,
    })
}

pub fn dump_ray_density(
    models: &[(String, &Model)],
    ray: &Ray,
    n: usize,
    path: &Path,
) -> Result<DensityProfile> {
    let p = ray_density(models, ray, n)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        io::create_dir(dir)?;
    }
    std::fs::write(path, p.to_csv()).map_err(|e| Error::io(path, e))?;
    Ok(p)
}
