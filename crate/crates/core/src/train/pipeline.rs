//! Sample placement, chunked rendering and the per-step gradient pass.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Architecture, Model};
use crate::nn::{choose_probes, finite_diff_check, FdReport, GradBuffer, RayLayout, Tape};
use crate::render::rays::{encode_direction, DIRECTION_DIM, DIRECTION_OCTAVES};
use crate::render::{
    background, importance_resample, midpoint_samples, quadrature, Modality, Ray, RenderOutput,
    Target,
};
use crate::train::{Batch, SamplingConfig, TrainConfig};

/// Loss components. `rgb`, `depth`, `intensity` and `drop` are unweighted
/// means; `constraint` already carries its weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub rgb: f64,
    pub depth: f64,
    pub intensity: f64,
    pub drop: f64,
    pub constraint: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.total,
            self.rgb,
            self.depth,
            self.intensity,
            self.drop,
            self.constraint,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    fn accumulate(&mut self, o: &LossBreakdown) {
        self.total += o.total;
        self.rgb += o.rgb;
        self.depth += o.depth;
        self.intensity += o.intensity;
        self.drop += o.drop;
        self.constraint += o.constraint;
    }

    /// `lambda_l * L_lidar + lambda_c * L_camera + constraint`.
    pub fn combine(&self, config: &TrainConfig) -> f64 {
        let w = &config.loss_weights;
        config.lambda_l * (w.depth * self.depth + w.intensity * self.intensity + w.drop * self.drop)
            + config.lambda_c * w.rgb * self.rgb
            + self.constraint
    }
}

impl fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "total={:.6} rgb={:.6} depth={:.6} intensity={:.6} drop={:.6} constraint={:.6}",
            self.total, self.rgb, self.depth, self.intensity, self.drop, self.constraint
        )
    }
}

fn ray_points(ray: &Ray, t: &[f64], points: &mut Vec<[f64; 3]>, dirs: &mut Vec<f64>) {
    let mut enc = Vec::with_capacity(DIRECTION_DIM);
    encode_direction(&ray.direction, DIRECTION_OCTAVES, &mut enc);
    for &ti in t {
        points.push(ray.at(ti).into());
        dirs.extend_from_slice(&enc);
    }
}

fn layout_for(rays: &[Ray], t: &[Vec<f64>]) -> RayLayout {
    let mut layout = RayLayout::default();
    layout.starts.push(0);
    for (i, (ray, ti)) in rays.iter().zip(t).enumerate() {
        layout.t.extend_from_slice(ti);
        layout.starts.push(layout.t.len());
        layout.t_far.push(ray.t_far);
        layout.ray_ids.push(i);
    }
    layout
}

/// Splits `0..n` into fixed chunks.
fn chunks(n: usize, size: usize) -> Vec<std::ops::Range<usize>> {
    (0..n)
        .step_by(size.max(1))
        .map(|s| s..(s + size).min(n))
        .collect()
}

/// Coarse stratified positions followed by importance resampling against
/// a density-only pass of the same field. `rng = None` gives bin midpoints
/// and evenly spaced quantiles. Random draws happen sequentially in ray
/// order before the parallel density pass.
pub fn sample_positions(
    model: &Model,
    rays: &[Ray],
    sampling: &SamplingConfig,
    chunk_rays: usize,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Vec<Vec<f64>>> {
    let n_c = sampling.coarse;
    let coarse: Vec<Vec<f64>> = rays
        .iter()
        .map(|r| match rng.as_deref_mut() {
            Some(rng) => crate::render::stratified_samples(r.t_near, r.t_far, n_c, rng),
            None => midpoint_samples(r.t_near, r.t_far, n_c),
        })
        .collect();
    if sampling.fine == 0 || rays.is_empty() {
        return Ok(coarse);
    }
    let modality = rays[0].modality;
    let weights: Vec<Vec<f64>> = chunks(rays.len(), chunk_rays)
        .into_par_iter()
        .map(|range| -> Result<Vec<Vec<f64>>> {
            let mut points = Vec::new();
            for i in range.clone() {
                points.extend(coarse[i].iter().map(|&t| <[f64; 3]>::from(rays[i].at(t))));
            }
            let sigma = model.density(modality, &Arc::new(points))?;
            let mut out = Vec::with_capacity(range.len());
            let mut at = 0;
            for i in range {
                let s = &sigma[at..at + n_c];
                at += n_c;
                if s.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteDensity { ray: i });
                }
                out.push(quadrature::ray_weights(&coarse[i], s, rays[i].t_far).0);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let mut out = Vec::with_capacity(rays.len());
    for (i, r) in rays.iter().enumerate() {
        out.push(importance_resample(
            &coarse[i],
            &weights[i],
            r.t_far,
            sampling.fine,
            rng.as_deref_mut(),
        ));
    }
    Ok(out)
}

/// Forward rendering of `rays` (all of one modality) at the given positions.
pub fn render_rays(
    model: &Model,
    rays: &[Ray],
    t: &[Vec<f64>],
    chunk_rays: usize,
) -> Result<Vec<RenderOutput>> {
    if rays.is_empty() {
        return Ok(Vec::new());
    }
    let modality = rays[0].modality;
    let k = match modality {
        Modality::Camera => 3,
        Modality::Lidar => 2,
    };
    let parts: Vec<Vec<RenderOutput>> = chunks(rays.len(), chunk_rays)
        .into_par_iter()
        .map(|range| -> Result<Vec<RenderOutput>> {
            let (mut points, mut dirs) = (Vec::new(), Vec::new());
            for i in range.clone() {
                ray_points(&rays[i], &t[i], &mut points, &mut dirs);
            }
            let mut tape = Tape::new();
            let b = model.forward(
                &mut tape,
                &model.params.values,
                modality,
                &Arc::new(points),
                Some(dirs),
                false,
                0.0,
            )?;
            let sigma = tape.value(b.sigma);
            let attrs = tape.value(b.attrs.expect("full forward"));
            let mut out = Vec::with_capacity(range.len());
            let mut at = 0;
            for i in range {
                let n = t[i].len();
                if sigma[at..at + n].iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteDensity { ray: i });
                }
                out.push(crate::render::composite(
                    modality,
                    &t[i],
                    &sigma[at..at + n],
                    &attrs[at * k..(at + n) * k],
                    rays[i].t_far,
                ));
                at += n;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

/// Loss of already rendered rays, computed directly from the outputs
/// without the gradient tape. The hard-constraint term is not included.
pub fn loss_from_outputs(
    config: &TrainConfig,
    half_extent: f64,
    lidar: &[(Ray, RenderOutput)],
    camera: &[(Ray, RenderOutput)],
) -> Result<LossBreakdown> {
    let mut parts = LossBreakdown::default();
    if !camera.is_empty() {
        let mut sum = 0.0;
        for (r, o) in camera {
            let Some(Target::Color(c)) = r.target else {
                return Err(Error::config("camera ray without color target"));
            };
            sum += (0..3).map(|k| (o.color[k] - c[k]).powi(2)).sum::<f64>();
        }
        parts.rgb = sum / (3 * camera.len()) as f64;
    }
    if !lidar.is_empty() {
        let (mut depth, mut inten, mut drop, mut valid) = (0.0, 0.0, 0.0, 0usize);
        for (r, o) in lidar {
            let Some(Target::Lidar {
                depth: d,
                intensity,
                drop: y,
            }) = r.target
            else {
                return Err(Error::config("lidar ray without lidar target"));
            };
            if y < 0.5 {
                valid += 1;
                depth += (o.depth - d).abs();
                inten += (o.intensity - intensity).powi(2);
            }
            let q = o
                .drop_prob
                .clamp(crate::nn::tape::BCE_EPS, 1.0 - crate::nn::tape::BCE_EPS);
            drop -= y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        }
        let nv = valid.max(1) as f64;
        parts.depth = depth / (half_extent * nv);
        parts.intensity = inten / nv;
        parts.drop = drop / lidar.len() as f64;
    }
    parts.total = parts.combine(config);
    Ok(parts)
}

/// Global normalizers shared by every chunk of a step.
#[derive(Clone, Copy, Debug)]
struct Norms {
    camera_rays: usize,
    lidar_rays: usize,
    lidar_valid: usize,
    samples: usize,
    half_extent: f64,
    constraint_weight: f64,
}

fn chunk_loss(
    model: &Model,
    config: &TrainConfig,
    modality: Modality,
    rays: &[Ray],
    t: &[Vec<f64>],
    norms: &Norms,
    grad: &mut GradBuffer,
) -> Result<LossBreakdown> {
    let params = &model.params.values;
    let (mut points, mut dirs) = (Vec::new(), Vec::new());
    for (r, ti) in rays.iter().zip(t) {
        ray_points(r, ti, &mut points, &mut dirs);
    }
    let n_samples = points.len();
    let layout = Arc::new(layout_for(rays, t));
    let mut tape = Tape::new();
    let cw = if norms.samples > 0 {
        norms.constraint_weight / norms.samples as f64
    } else {
        0.0
    };
    let b = model.forward(
        &mut tape,
        params,
        modality,
        &Arc::new(points),
        Some(dirs),
        false,
        cw,
    )?;
    let attrs = b.attrs.expect("full forward");
    debug_assert_eq!(tape.shape(attrs).0, n_samples);
    let comp = tape.composite(b.sigma, attrs, &layout, background(modality))?;
    let w = &config.loss_weights;
    let mut parts = LossBreakdown::default();
    let mut terms = Vec::new();
    match modality {
        Modality::Camera => {
            let mut target = Vec::with_capacity(rays.len() * 3);
            for r in rays {
                match r.target {
                    Some(Target::Color(c)) => target.extend_from_slice(&c),
                    _ => return Err(Error::config("camera ray without color target")),
                }
            }
            let rgb = tape.columns(comp, 0, 3)?;
            let inv = 1.0 / (3 * norms.camera_rays) as f64;
            let node = tape.squared_error(rgb, target, vec![inv; rays.len()])?;
            parts.rgb = tape.scalar(node);
            terms.push((node, config.lambda_c * w.rgb));
        }
        Modality::Lidar => {
            let (mut depth, mut inten, mut drop, mut valid) =
                (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for r in rays {
                match r.target {
                    Some(Target::Lidar {
                        depth: d,
                        intensity,
                        drop: p,
                    }) => {
                        depth.push(d);
                        inten.push(intensity);
                        drop.push(p);
                        valid.push(if p < 0.5 { 1.0 } else { 0.0 });
                    }
                    _ => return Err(Error::config("lidar ray without lidar target")),
                }
            }
            let nv = norms.lidar_valid.max(1) as f64;
            let dw: Vec<f64> = valid.iter().map(|v| v / (norms.half_extent * nv)).collect();
            let iw: Vec<f64> = valid.iter().map(|v| v / nv).collect();
            let rw = vec![1.0 / norms.lidar_rays as f64; rays.len()];
            let d_col = tape.columns(comp, 2, 1)?;
            let i_col = tape.columns(comp, 0, 1)?;
            let p_col = tape.columns(comp, 1, 1)?;
            let dn = tape.abs_error(d_col, depth, dw)?;
            let inn = tape.squared_error(i_col, inten, iw)?;
            let pn = tape.binary_cross_entropy(p_col, drop, rw)?;
            parts.depth = tape.scalar(dn);
            parts.intensity = tape.scalar(inn);
            parts.drop = tape.scalar(pn);
            terms.push((dn, config.lambda_l * w.depth));
            terms.push((inn, config.lambda_l * w.intensity));
            terms.push((pn, config.lambda_l * w.drop));
        }
    }
    if let Some(c) = b.constraint {
        parts.constraint = tape.scalar(c);
        terms.push((c, 1.0));
    }
    let root = tape.combine(&terms)?;
    parts.total = tape.scalar(root);
    tape.backward(root, params, grad);
    Ok(parts)
}

/// Places samples, evaluates the loss over `batch` and accumulates its
/// gradient into `model.params.grad`. Chunks are reduced in a fixed order,
/// so the result does not depend on the worker count.
pub fn compute_gradients(
    model: &mut Model,
    batch: &Batch,
    config: &TrainConfig,
    lidar_rng: &mut ChaCha8Rng,
    camera_rng: &mut ChaCha8Rng,
    step: u64,
) -> Result<LossBreakdown> {
    let t_lidar = sample_positions(
        model,
        &batch.lidar,
        &config.sampling,
        config.chunk_rays,
        Some(lidar_rng),
    )?;
    let t_camera = sample_positions(
        model,
        &batch.camera,
        &config.sampling,
        config.chunk_rays,
        Some(camera_rng),
    )?;
    let constraint_weight = if model.architecture() == Architecture::HardConstraint {
        model.spec.hard_constraint_weight * config.loss_weights.hard_constraint
    } else {
        0.0
    };
    let norms = Norms {
        camera_rays: batch.camera.len(),
        lidar_rays: batch.lidar.len(),
        lidar_valid: batch
            .lidar
            .iter()
            .filter(|r| matches!(r.target, Some(Target::Lidar { drop, .. }) if drop < 0.5))
            .count(),
        samples: t_lidar.iter().chain(&t_camera).map(Vec::len).sum(),
        half_extent: model.grid_config.bounds.half_extent(),
        constraint_weight,
    };
    let mut jobs: Vec<(Modality, std::ops::Range<usize>)> = Vec::new();
    for (m, n) in [
        (Modality::Lidar, batch.lidar.len()),
        (Modality::Camera, batch.camera.len()),
    ] {
        jobs.extend(chunks(n, config.chunk_rays).into_iter().map(|r| (m, r)));
    }
    let n_params = model.params.len();
    let wave = rayon::current_num_threads().max(1);
    let mut pool: Vec<GradBuffer> = (0..wave.min(jobs.len()))
        .map(|_| GradBuffer::new(n_params))
        .collect();
    let mut total = LossBreakdown::default();
    let mut grad = std::mem::take(&mut model.params.grad);
    let shared: &Model = model;
    let result = (|| -> Result<()> {
        for group in jobs.chunks(wave) {
            let parts: Vec<Result<LossBreakdown>> = pool[..group.len()]
                .par_iter_mut()
                .zip(group.par_iter())
                .map(|(buf, (m, range))| {
                    let (rays, t) = match m {
                        Modality::Lidar => (&batch.lidar[range.clone()], &t_lidar[range.clone()]),
                        Modality::Camera => {
                            (&batch.camera[range.clone()], &t_camera[range.clone()])
                        }
                    };
                    chunk_loss(shared, config, *m, rays, t, &norms, buf)
                })
                .collect();
            for (buf, part) in pool.iter_mut().zip(parts) {
                total.accumulate(&part?);
                buf.flush_into(&mut grad);
            }
        }
        Ok(())
    })();
    model.params.grad = grad;
    result?;
    if !total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            breakdown: total.to_string(),
        });
    }
    Ok(total)
}

/// Central-difference check of [`compute_gradients`] at `n_probes`
/// trainable parameters. Fine sampling is disabled and every evaluation
/// replays the same generator states, so sample positions stay fixed while
/// parameters move.
pub fn check_gradients(
    model: &mut Model,
    batch: &Batch,
    config: &TrainConfig,
    n_probes: usize,
    eps: f64,
    seed: u64,
) -> Result<FdReport> {
    let mut cfg = config.clone();
    cfg.sampling.fine = 0;
    let keep = |m: Modality, rays: &[Ray]| {
        if model.supports(m) {
            rays.to_vec()
        } else {
            Vec::new()
        }
    };
    let batch = &Batch {
        lidar: keep(Modality::Lidar, &batch.lidar),
        camera: keep(Modality::Camera, &batch.camera),
        ..batch.clone()
    };
    let lidar = ChaCha8Rng::seed_from_u64(seed);
    let camera = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let saved_grad = std::mem::take(&mut model.params.grad);
    model.params.grad = vec![0.0; saved_grad.len()];
    compute_gradients(
        model,
        batch,
        &cfg,
        &mut lidar.clone(),
        &mut camera.clone(),
        0,
    )?;
    let analytic = std::mem::replace(&mut model.params.grad, vec![0.0; saved_grad.len()]);

    let trainable: Vec<usize> = model
        .params
        .segments()
        .iter()
        .filter(|s| s.trainable)
        .flat_map(|s| s.range())
        .collect();
    let sub: Vec<f64> = trainable.iter().map(|&i| analytic[i]).collect();
    let mut probe_rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let probes: Vec<usize> = choose_probes(&sub, n_probes, &mut probe_rng)
        .into_iter()
        .map(|k| trainable[k])
        .collect();

    let mut values = model.params.values.clone();
    let mut failure = None;
    let report = finite_diff_check(&mut values, &analytic, &probes, eps, |p| {
        model.params.values.copy_from_slice(p);
        let loss = compute_gradients(
            model,
            batch,
            &cfg,
            &mut lidar.clone(),
            &mut camera.clone(),
            0,
        );
        model.params.zero_grad();
        match loss {
            Ok(l) => l.total,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    model.params.values.copy_from_slice(&values);
    model.params.grad = saved_grad;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
