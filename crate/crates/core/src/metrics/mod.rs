//! Image and point-cloud evaluation metrics.

pub mod kdtree;

use rayon::prelude::*;

use crate::error::{Error, Result};
pub use kdtree::{brute_force_nearest, KdTree};

/// Value reported for identical images.
pub const PSNR_CAP: f64 = 99.0;
pub const FSCORE_THRESHOLD: f64 = 0.05;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Row-major interleaved image.
#[derive(Clone, Copy, Debug)]
pub struct ImageView<'a> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: &'a [f64],
}

impl<'a> ImageView<'a> {
    pub fn new(width: usize, height: usize, channels: usize, data: &'a [f64]) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

fn same_shape(a: &ImageView, b: &ImageView) -> Result<()> {
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels) {
        return Err(Error::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

pub fn mse(pred: &[f64], gt: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} vs {} values",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Empty("image"));
    }
    Ok(pred
        .iter()
        .zip(gt)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64)
}

/// `-10 log10(MSE / peak^2)`, capped at [`PSNR_CAP`].
pub fn psnr(pred: &[f64], gt: &[f64], peak: f64) -> Result<f64> {
    let m = mse(pred, gt)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * (m / (peak * peak)).log10()).min(PSNR_CAP))
}

pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of a single-channel plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid 11x11 Gaussian windows, averaged over channels.
pub fn ssim(pred: &ImageView, gt: &ImageView) -> Result<f64> {
    same_shape(pred, gt)?;
    if pred.width < SSIM_WINDOW || pred.height < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "image {}x{} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            pred.width, pred.height
        )));
    }
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let (w, h) = (pred.width, pred.height);
    let per_channel: Vec<f64> = (0..pred.channels)
        .into_par_iter()
        .map(|c| {
            let x: Vec<f64> = (0..w * h).map(|i| pred.at(i % w, i / w, c)).collect();
            let y: Vec<f64> = (0..w * h).map(|i| gt.at(i % w, i / w, c)).collect();
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
            let [mx, my, sxx, syy, sxy] =
                [&x, &y, &xx, &yy, &xy].map(|p| filter_valid(p, w, h, &k));
            let n = mx.len();
            (0..n)
                .map(|i| {
                    let (ux, uy) = (mx[i], my[i]);
                    let vx = sxx[i] - ux * ux;
                    let vy = syy[i] - uy * uy;
                    let cov = sxy[i] - ux * uy;
                    ((2.0 * ux * uy + C1) * (2.0 * cov + C2))
                        / ((ux * ux + uy * uy + C1) * (vx + vy + C2))
                })
                .sum::<f64>()
                / n as f64
        })
        .collect();
    Ok(per_channel.iter().sum::<f64>() / per_channel.len() as f64)
}

/// Per-window SSIM evaluated directly from the window sums, without
/// separable filtering.
pub fn ssim_direct(pred: &ImageView, gt: &ImageView) -> Result<f64> {
    same_shape(pred, gt)?;
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let n = SSIM_WINDOW;
    let (ow, oh) = (pred.width + 1 - n, pred.height + 1 - n);
    let mut total = 0.0;
    for c in 0..pred.channels {
        let mut acc = 0.0;
        for oy in 0..oh {
            for ox in 0..ow {
                let (mut ux, mut uy) = (0.0, 0.0);
                for j in 0..n {
                    for i in 0..n {
                        let w = k[i] * k[j];
                        ux += w * pred.at(ox + i, oy + j, c);
                        uy += w * gt.at(ox + i, oy + j, c);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for j in 0..n {
                    for i in 0..n {
                        let w = k[i] * k[j];
                        let dx = pred.at(ox + i, oy + j, c) - ux;
                        let dy = gt.at(ox + i, oy + j, c) - uy;
                        vx += w * dx * dx;
                        vy += w * dy * dy;
                        cov += w * dx * dy;
                    }
                }
                acc += ((2.0 * ux * uy + C1) * (2.0 * cov + C2))
                    / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
            }
        }
        total += acc / (ow * oh) as f64;
    }
    Ok(total / pred.channels as f64)
}

fn nn_distances(from: &[[f64; 3]], to: &KdTree) -> Vec<f64> {
    from.par_iter().map(|p| to.nearest_distance(p)).collect()
}

/// `(mean_a NN(a, b) + mean_b NN(b, a)) / 2` with Euclidean distances.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    let da = nn_distances(a, &KdTree::new(b));
    let db = nn_distances(b, &KdTree::new(a));
    Ok(0.5 * (da.iter().sum::<f64>() / da.len() as f64 + db.iter().sum::<f64>() / db.len() as f64))
}

/// Harmonic mean of precision (share of `a` within `threshold` of `b`) and
/// recall (share of `b` within `threshold` of `a`).
pub fn fscore(a: &[[f64; 3]], b: &[[f64; 3]], threshold: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    let da = nn_distances(a, &KdTree::new(b));
    let db = nn_distances(b, &KdTree::new(a));
    let precision = da.iter().filter(|d| **d < threshold).count() as f64 / da.len() as f64;
    let recall = db.iter().filter(|d| **d < threshold).count() as f64 / db.len() as f64;
    Ok(harmonic(precision, recall))
}

pub fn harmonic(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Mean `|pred - gt|` over rays whose ground-truth drop flag is 0.
pub fn intensity_mae(pred: &[f64], gt: &[f64], gt_drop: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || gt.len() != gt_drop.len() {
        return Err(Error::Shape("intensity arrays differ in length".into()));
    }
    let (sum, n) = pred
        .iter()
        .zip(gt)
        .zip(gt_drop)
        .filter(|(_, d)| **d < 0.5)
        .fold((0.0, 0usize), |(s, n), ((p, g), _)| {
            (s + (p - g).abs(), n + 1)
        });
    if n == 0 {
        return Err(Error::Empty("valid LiDAR rays"));
    }
    Ok(sum / n as f64)
}

/// Root-mean-square depth error over rays whose ground-truth drop flag is 0.
pub fn depth_rmse(pred: &[f64], gt: &[f64], gt_drop: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || gt.len() != gt_drop.len() {
        return Err(Error::Shape("depth arrays differ in length".into()));
    }
    let (sum, n) = pred
        .iter()
        .zip(gt)
        .zip(gt_drop)
        .filter(|(_, d)| **d < 0.5)
        .fold((0.0, 0usize), |(s, n), ((p, g), _)| {
            (s + (p - g).powi(2), n + 1)
        });
    if n == 0 {
        return Err(Error::Empty("valid LiDAR rays"));
    }
    Ok((sum / n as f64).sqrt())
}
