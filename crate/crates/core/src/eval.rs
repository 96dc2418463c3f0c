//! Test-split rendering and metric aggregation.
//!
//! Camera metrics compare full rendered images against the ground truth.
//! LiDAR point clouds are rebuilt from range images along the declared
//! sensor rays: predicted points keep rays with `drop_prob <= 0.5`, ground
//! truth points keep rays with a recorded return.

use std::path::Path;

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Model;
use crate::metrics::{self, ImageView, FSCORE_THRESHOLD};
use crate::render::{LidarPattern, Modality, Ray, RenderOutput};
use crate::scene::{Dataset, Frame, LidarScan, Split};
use crate::train::{render_rays, sample_positions, SamplingConfig};

pub const DROP_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub split: Split,
    pub sampling: SamplingConfig,
    pub chunk_rays: usize,
}

impl EvalOptions {
    /// Evaluation with the sampling budget the model was trained with.
    pub fn matching(sampling: &SamplingConfig, chunk_rays: usize) -> Self {
        Self {
            split: Split::Test,
            sampling: *sampling,
            chunk_rays,
        }
    }
}

/// Model output for one frame in dataset layout.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedFrame {
    pub index: usize,
    pub image: Option<Vec<f64>>,
    /// `drop` holds predicted drop probabilities.
    pub scan: Option<LidarScan>,
}

impl RenderedFrame {
    /// The ground truth of `frame` presented as a prediction.
    pub fn from_ground_truth(frame: &Frame) -> Self {
        Self {
            index: frame.index,
            image: Some(frame.image.clone()),
            scan: Some(frame.scan.clone()),
        }
    }
}

/// Renders `rays` in flat order; `None` entries never enter the domain box
/// and take the background value.
fn render_all(
    model: &Model,
    rays: Vec<Option<Ray>>,
    opts: &EvalOptions,
) -> Result<Vec<Option<RenderOutput>>> {
    let present: Vec<Ray> = rays.iter().flatten().cloned().collect();
    let t = sample_positions(model, &present, &opts.sampling, opts.chunk_rays, None)?;
    let mut rendered = render_rays(model, &present, &t, opts.chunk_rays)?.into_iter();
    Ok(rays
        .iter()
        .map(|r| r.as_ref().and_then(|_| rendered.next()))
        .collect())
}

pub fn render_camera(
    model: &Model,
    dataset: &Dataset,
    frame: usize,
    opts: &EvalOptions,
) -> Result<Vec<f64>> {
    let n = dataset.rays_per_frame(Modality::Camera);
    let rays = (0..n)
        .map(|i| dataset.ray(Modality::Camera, frame, i))
        .collect();
    let out = render_all(model, rays, opts)?;
    Ok(out
        .iter()
        .flat_map(|o| o.as_ref().map_or([0.0; 3], |o| o.color))
        .collect())
}

pub fn render_lidar(
    model: &Model,
    dataset: &Dataset,
    frame: usize,
    opts: &EvalOptions,
) -> Result<LidarScan> {
    let n = dataset.rays_per_frame(Modality::Lidar);
    let rays = (0..n)
        .map(|i| dataset.ray(Modality::Lidar, frame, i))
        .collect();
    let out = render_all(model, rays, opts)?;
    let mut scan = LidarScan {
        range: Vec::with_capacity(n),
        intensity: Vec::with_capacity(n),
        drop: Vec::with_capacity(n),
    };
    for o in &out {
        let (r, i, d) = o
            .as_ref()
            .map_or((0.0, 0.0, 1.0), |o| (o.depth, o.intensity, o.drop_prob));
        scan.range.push(r);
        scan.intensity.push(i);
        scan.drop.push(d);
    }
    Ok(scan)
}

/// Renders every modality the model supports.
pub fn render_frame(
    model: &Model,
    dataset: &Dataset,
    frame: usize,
    opts: &EvalOptions,
) -> Result<RenderedFrame> {
    let image = if model.supports(Modality::Camera) {
        Some(render_camera(model, dataset, frame, opts)?)
    } else {
        None
    };
    let scan = if model.supports(Modality::Lidar) {
        Some(render_lidar(model, dataset, frame, opts)?)
    } else {
        None
    };
    Ok(RenderedFrame {
        index: frame,
        image,
        scan,
    })
}

/// World points `origin + range * direction` for cells where `keep` holds.
pub fn scan_points(
    pose: &Isometry3<f64>,
    pattern: &LidarPattern,
    range: &[f64],
    keep: impl Fn(usize) -> bool,
) -> Vec<[f64; 3]> {
    let o = pose.translation.vector;
    (0..pattern.ray_count())
        .filter(|&c| keep(c))
        .map(|c| {
            let d = pose.rotation * pattern.direction(c / pattern.n_azimuth, c % pattern.n_azimuth);
            (o + d * range[c]).into()
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMetrics {
    pub frame: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub chamfer: Option<f64>,
    pub fscore: Option<f64>,
    pub intensity_mae: Option<f64>,
    pub depth_rmse: Option<f64>,
}

/// Split averages of the per-frame metrics; `None` for modalities the
/// model does not render.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub chamfer: Option<f64>,
    pub fscore: Option<f64>,
    pub intensity_mae: Option<f64>,
    pub depth_rmse: Option<f64>,
    #[serde(skip)]
    pub frames: Vec<FrameMetrics>,
}

pub const FRAME_CSV_HEADER: &str = "frame,psnr,ssim,chamfer,fscore,intensity_mae,depth_rmse";

pub fn frame_metrics(dataset: &Dataset, rendered: &RenderedFrame) -> Result<FrameMetrics> {
    let frame = &dataset.frames[rendered.index];
    let mut m = FrameMetrics {
        frame: frame.index,
        ..Default::default()
    };
    if let Some(img) = &rendered.image {
        let k = dataset.intrinsics();
        m.psnr = Some(metrics::psnr(img, &frame.image, 1.0)?);
        let pred = ImageView::new(k.width, k.height, 3, img)?;
        let gt = ImageView::new(k.width, k.height, 3, &frame.image)?;
        m.ssim = Some(metrics::ssim(&pred, &gt)?);
    }
    if let Some(scan) = &rendered.scan {
        let gt = &frame.scan;
        let pat = dataset.pattern();
        let gt_pts = scan_points(&frame.lidar_pose, pat, &gt.range, |c| gt.drop[c] < 0.5);
        let pred_pts = scan_points(&frame.lidar_pose, pat, &scan.range, |c| {
            scan.drop[c] <= DROP_THRESHOLD
        });
        if pred_pts.is_empty() {
            return Err(Error::Empty("predicted LiDAR returns"));
        }
        m.chamfer = Some(metrics::chamfer(&pred_pts, &gt_pts)?);
        m.fscore = Some(metrics::fscore(&pred_pts, &gt_pts, FSCORE_THRESHOLD)?);
        m.intensity_mae = Some(metrics::intensity_mae(
            &scan.intensity,
            &gt.intensity,
            &gt.drop,
        )?);
        m.depth_rmse = Some(metrics::depth_rmse(&scan.range, &gt.range, &gt.drop)?);
    }
    Ok(m)
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl Metrics {
    pub fn aggregate(frames: Vec<FrameMetrics>) -> Self {
        Self {
            psnr: mean(frames.iter().map(|f| f.psnr)),
            ssim: mean(frames.iter().map(|f| f.ssim)),
            chamfer: mean(frames.iter().map(|f| f.chamfer)),
            fscore: mean(frames.iter().map(|f| f.fscore)),
            intensity_mae: mean(frames.iter().map(|f| f.intensity_mae)),
            depth_rmse: mean(frames.iter().map(|f| f.depth_rmse)),
            frames,
        }
    }

    pub fn frame_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        let mut s = format!("{FRAME_CSV_HEADER}\n");
        for f in &self.frames {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                f.frame,
                cell(f.psnr),
                cell(f.ssim),
                cell(f.chamfer),
                cell(f.fscore),
                cell(f.intensity_mae),
                cell(f.depth_rmse)
            ));
        }
        s
    }

    /// Writes `path` as JSON and the per-frame table next to it as
    /// `<stem>_frames.csv`.
    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_json(path, self)?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("metrics");
        let csv = path.with_file_name(format!("{stem}_frames.csv"));
        std::fs::write(&csv, self.frame_csv()).map_err(|e| Error::io(&csv, e))
    }
}

pub fn evaluate(model: &Model, dataset: &Dataset, opts: &EvalOptions) -> Result<Metrics> {
    let indices = dataset.frame_indices(opts.split);
    if indices.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let mut frames = Vec::with_capacity(indices.len());
    for i in indices {
        let r = render_frame(model, dataset, i, opts)?;
        frames.push(frame_metrics(dataset, &r)?);
    }
    Ok(Metrics::aggregate(frames))
}
