//! Camera and LiDAR ray generation.

use nalgebra::{Isometry3, Vector3};
use serde::{Deserialize, Serialize};

use crate::grid::Aabb;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Lidar,
    Camera,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Lidar => "lidar",
            Modality::Camera => "camera",
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Lidar => Modality::Camera,
            Modality::Camera => Modality::Lidar,
        }
    }
}

/// Supervision attached to a training or evaluation ray.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Color([f64; 3]),
    Lidar {
        depth: f64,
        intensity: f64,
        drop: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub modality: Modality,
    pub t_near: f64,
    pub t_far: f64,
    pub target: Option<Target>,
}

impl Ray {
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>, modality: Modality) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
            modality,
            t_near: 0.0,
            t_far: f64::INFINITY,
            target: None,
        }
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }

    /// Restricts `[t_near, t_far]` to the part inside `bounds`; `None` when
    /// the ray never enters the box.
    pub fn clip(mut self, bounds: &Aabb) -> Option<Ray> {
        let (t0, t1) = bounds.intersect(self.origin.into(), self.direction.into())?;
        let near = t0.max(self.t_near).max(0.0);
        let far = t1.min(self.t_far);
        if far - near <= 1e-9 {
            return None;
        }
        self.t_near = near;
        self.t_far = far;
        Some(self)
    }
}

/// Pinhole intrinsics. Pixel `(u, v)` has its center at integer coordinates
/// `u = column`, `v = row`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    /// Square pixels, centered principal point, given horizontal field of view.
    pub fn from_hfov(width: usize, height: usize, hfov_deg: f64) -> Self {
        let f = 0.5 * width as f64 / (0.5 * hfov_deg.to_radians()).tan();
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Direction of pixel `(u, v)` in the optical frame (z forward, x right, y down).
    pub fn direction(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0).normalize()
    }

    /// Projects an optical-frame point; `None` behind the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        (p.z > 1e-9).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Rays through the given `(column, row)` pixels. `pose` maps the optical
/// frame to the world.
pub fn camera_rays(
    pose: &Isometry3<f64>,
    intrinsics: &Intrinsics,
    pixels: &[(usize, usize)],
) -> Vec<Ray> {
    let origin = pose.translation.vector;
    pixels
        .iter()
        .map(|&(u, v)| {
            let d = pose.rotation * intrinsics.direction(u as f64, v as f64);
            Ray::new(origin, d, Modality::Camera)
        })
        .collect()
}

/// Spherical scan pattern. Beams run from the top elevation down; azimuth
/// `j` is `2 pi j / n_azimuth` counter-clockwise from the sensor x axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarPattern {
    pub n_beams: usize,
    /// `[lowest, highest]` elevation in degrees.
    pub elevation_range: [f64; 2],
    pub n_azimuth: usize,
}

impl LidarPattern {
    pub fn ray_count(&self) -> usize {
        self.n_beams * self.n_azimuth
    }

    pub fn elevation(&self, beam: usize) -> f64 {
        let [lo, hi] = self.elevation_range;
        if self.n_beams == 1 {
            return hi.to_radians();
        }
        (hi - (hi - lo) * beam as f64 / (self.n_beams - 1) as f64).to_radians()
    }

    pub fn azimuth(&self, column: usize) -> f64 {
        std::f64::consts::TAU * column as f64 / self.n_azimuth as f64
    }

    /// Sensor-frame direction of range-image cell `(beam, column)`.
    pub fn direction(&self, beam: usize, column: usize) -> Vector3<f64> {
        let (e, a) = (self.elevation(beam), self.azimuth(column));
        Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin())
    }
}

/// One ray per range-image cell, row-major with the top beam first.
pub fn lidar_rays(pose: &Isometry3<f64>, pattern: &LidarPattern) -> Vec<Ray> {
    let origin = pose.translation.vector;
    let mut out = Vec::with_capacity(pattern.ray_count());
    for b in 0..pattern.n_beams {
        for c in 0..pattern.n_azimuth {
            out.push(Ray::new(
                origin,
                pose.rotation * pattern.direction(b, c),
                Modality::Lidar,
            ));
        }
    }
    out
}

/// Frequency encoding of a unit direction: `sin(2^k pi d), cos(2^k pi d)`
/// per axis for `k < octaves`.
pub fn encode_direction(d: &Vector3<f64>, octaves: usize, out: &mut Vec<f64>) {
    for k in 0..octaves {
        let f = std::f64::consts::PI * (1u64 << k) as f64;
        for axis in 0..3 {
            let (s, c) = (f * d[axis]).sin_cos();
            out.push(s);
            out.push(c);
        }
    }
}

pub const DIRECTION_OCTAVES: usize = 4;
pub const DIRECTION_DIM: usize = 6 * DIRECTION_OCTAVES;
