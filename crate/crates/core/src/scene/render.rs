//! Ground-truth sensor observations.

use nalgebra::{Isometry3, Vector3};

use crate::render::{camera_rays, lidar_rays, Intrinsics, LidarPattern, Modality, Ray};
use crate::scene::primitives::{cast_ray, Hit};
use crate::scene::spec::SceneSpec;

/// `albedo * min(1, max(0, n . l) + ambient)` per channel.
pub fn shade(
    albedo: [f64; 3],
    normal: &Vector3<f64>,
    light: &Vector3<f64>,
    ambient: f64,
) -> [f64; 3] {
    let k = (normal.dot(light).max(0.0) + ambient).min(1.0);
    albedo.map(|a| (a * k).clamp(0.0, 1.0))
}

/// `reflectivity * |n . d| / (1 + (t / falloff)^2)`, clamped to `[0, 1]`.
pub fn lidar_intensity(
    reflectivity: f64,
    normal: &Vector3<f64>,
    dir: &Vector3<f64>,
    t: f64,
    falloff: f64,
) -> f64 {
    let r = t / falloff;
    (reflectivity * normal.dot(dir).abs() / (1.0 + r * r)).clamp(0.0, 1.0)
}

/// Nearest hit that lies inside the domain box and within `max_range`.
pub fn observe(scene: &SceneSpec, ray: &Ray, max_range: f64) -> Option<Hit> {
    let dilation = scene.misalignment.lidar_dilation;
    let hit = cast_ray(
        &ray.origin,
        &ray.direction,
        &scene.primitives,
        ray.modality,
        dilation,
    )?;
    let p = ray.at(hit.t);
    (hit.t <= max_range && scene.bounds.contains(p.into(), 1e-9)).then_some(hit)
}

/// Row-major RGB image; misses are black sky.
pub fn render_gt_camera(
    scene: &SceneSpec,
    pose: &Isometry3<f64>,
    intrinsics: &Intrinsics,
) -> Vec<f64> {
    let pixels: Vec<(usize, usize)> = (0..intrinsics.height)
        .flat_map(|v| (0..intrinsics.width).map(move |u| (u, v)))
        .collect();
    let light = Vector3::from(scene.light_dir).normalize();
    let mut out = Vec::with_capacity(pixels.len() * 3);
    for ray in camera_rays(pose, intrinsics, &pixels) {
        let rgb = match observe(scene, &ray, f64::INFINITY) {
            Some(h) => {
                let m = &scene.primitives[h.primitive].material;
                shade(m.albedo_at(&ray.at(h.t)), &h.normal, &light, scene.ambient)
            }
            None => [0.0; 3],
        };
        out.extend_from_slice(&rgb);
    }
    out
}

/// Range, intensity and drop images of one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct LidarScan {
    pub range: Vec<f64>,
    pub intensity: Vec<f64>,
    pub drop: Vec<f64>,
}

pub fn render_gt_lidar(
    scene: &SceneSpec,
    pose: &Isometry3<f64>,
    pattern: &LidarPattern,
    max_range: f64,
) -> LidarScan {
    let rays = lidar_rays(pose, pattern);
    let mut scan = LidarScan {
        range: Vec::with_capacity(rays.len()),
        intensity: Vec::with_capacity(rays.len()),
        drop: Vec::with_capacity(rays.len()),
    };
    for ray in &rays {
        match observe(scene, ray, max_range) {
            Some(h) => {
                let refl = scene.primitives[h.primitive].material.lidar_reflectivity;
                scan.range.push(h.t);
                scan.intensity.push(lidar_intensity(
                    refl,
                    &h.normal,
                    &ray.direction,
                    h.t,
                    scene.intensity_falloff,
                ));
                scan.drop.push(0.0);
            }
            None => {
                scan.range.push(0.0);
                scan.intensity.push(0.0);
                scan.drop.push(1.0);
            }
        }
    }
    scan
}

/// Ground-truth depth along a camera ray, as either sensor would measure it.
pub fn gt_depth(scene: &SceneSpec, ray: &Ray, modality: Modality) -> Option<f64> {
    let r = Ray {
        modality,
        ..ray.clone()
    };
    observe(scene, &r, f64::INFINITY).map(|h| h.t)
}
