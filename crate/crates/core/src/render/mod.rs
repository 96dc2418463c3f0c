//! Ray generation, sample placement and volume-rendering quadrature.

pub mod quadrature;
pub mod rays;
pub mod sampling;

pub use quadrature::{composite_ray, ray_weights, Composite};
pub use rays::{camera_rays, lidar_rays, Intrinsics, LidarPattern, Modality, Ray, Target};
pub use sampling::{importance_resample, midpoint_samples, stratified_samples};

/// Background a ray sees after leaving the scene: black sky for color and
/// intensity, certain drop for the ray-drop channel.
pub fn background(modality: Modality) -> &'static [f64] {
    match modality {
        Modality::Camera => &[0.0, 0.0, 0.0],
        Modality::Lidar => &[0.0, 1.0],
    }
}

/// Composited quantities of one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: [f64; 3],
    pub depth: f64,
    pub intensity: f64,
    pub drop_prob: f64,
    pub opacity: f64,
    pub weights: Vec<f64>,
    pub trans_residual: f64,
}

/// Composites per-sample attributes for `modality`: RGB rows for the
/// camera, `(intensity, drop)` rows for LiDAR. Fields of the other
/// modality stay zero.
pub fn composite(
    modality: Modality,
    t: &[f64],
    sigma: &[f64],
    attrs: &[f64],
    t_far: f64,
) -> RenderOutput {
    let k = match modality {
        Modality::Camera => 3,
        Modality::Lidar => 2,
    };
    let c = composite_ray(t, sigma, attrs, k, background(modality), t_far);
    let mut out = RenderOutput {
        color: [0.0; 3],
        depth: c.depth,
        intensity: 0.0,
        drop_prob: 0.0,
        opacity: c.opacity,
        weights: c.weights,
        trans_residual: c.residual,
    };
    match modality {
        Modality::Camera => out.color.copy_from_slice(&c.attrs),
        Modality::Lidar => {
            out.intensity = c.attrs[0];
            out.drop_prob = c.attrs[1];
        }
    }
    out
}
