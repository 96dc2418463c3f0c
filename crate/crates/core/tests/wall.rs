//! Regression run on a scene holding a single opaque wall.

mod common;

use common::*;
use mmfield::diagnostics::ray_density;
use mmfield::field::*;
use mmfield::grid::GridConfig;
use mmfield::render::{ray_weights, Modality, Ray};
use mmfield::scene::{Dataset, Material, Preset, Primitive, Shape};
use mmfield::train::*;
use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const WALL_X: f64 = 4.0;

fn wall_dataset() -> Dataset {
    let mut scene = tiny_scene(Preset::AlignedStreet);
    for k in ["lidar_beams=16", "lidar_azimuth=64"] {
        mmfield::scene::apply_knob(&mut scene, k).unwrap();
    }
    scene.primitives = vec![Primitive {
        shape: Shape::Cuboid {
            min: [WALL_X, -5.0, -0.5],
            max: [WALL_X + 0.05, 5.0, 3.5],
        },
        material: Material::plain([0.7, 0.7, 0.7], 0.8),
    }];
    Dataset::generate(&scene, 0).unwrap()
}

fn depth_loss(m: &mut Model, batch: &Batch, cfg: &TrainConfig) -> f64 {
    m.params.zero_grad();
    let mut a = ChaCha8Rng::seed_from_u64(1);
    let mut b = ChaCha8Rng::seed_from_u64(2);
    let l = compute_gradients(m, batch, cfg, &mut a, &mut b, 0).unwrap();
    m.params.zero_grad();
    l.depth
}

#[test]
fn lidar_field_learns_the_wall() {
    let d = wall_dataset();
    let grid = GridConfig {
        levels: 8,
        feature_dim: 2,
        table_size_log2: 14,
        base_resolution: 8,
        growth_factor: 2.0,
        bounds: d.scene.bounds.clone(),
    }
    .with_finest_resolution(256);
    let cfg = TrainConfig {
        rays_per_step: 128,
        iterations: 500,
        sampling: SamplingConfig {
            coarse: 32,
            fine: 16,
        },
        ..TrainConfig::default()
    };
    let mut m = Model::new(
        ModelSpec::new(Architecture::SingleLidar),
        grid,
        MlpConfig::uniform(32, 2),
        0,
        None,
    )
    .unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let held = make_batch(&d, (256, 0), &mut r.clone(), &mut r).unwrap();
    let before = depth_loss(&mut m, &held, &cfg);
    train(&mut m, &d, &cfg, None).unwrap();
    let after = depth_loss(&mut m, &held, &cfg);
    assert!(after < 0.1 * before, "depth L1 {before} -> {after}");

    // A level beam from the first pose hits the wall head on.
    let origin = d.frames[0].lidar_pose.translation.vector;
    let ray = Ray::new(origin, Vector3::x(), Modality::Lidar)
        .clip(&d.scene.bounds)
        .unwrap();
    let n = 64;
    let profile = ray_density(&[("lidar".to_string(), &m)], &ray, n).unwrap();
    let spacing = (ray.t_far - ray.t_near) / n as f64;
    let expected = ((WALL_X - origin.x - ray.t_near) / spacing).floor() as i64;
    // Density behind the front face is never observed, so the surface is
    // read from the quadrature weights of the profile.
    let (w, _) = ray_weights(&profile.t, &profile.sigma[0], ray.t_far);
    let peak = w
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap()
        .0 as i64;
    assert!(
        (peak - expected).abs() <= 2,
        "surface bin {peak}, wall bin {expected}"
    );
    let max = profile.sigma[0].iter().copied().fold(0.0, f64::max);
    let free = &profile.sigma[0][..(expected - 4) as usize];
    assert!(
        free.iter().all(|s| *s < 0.05 * max),
        "free space is not clear"
    );
}
