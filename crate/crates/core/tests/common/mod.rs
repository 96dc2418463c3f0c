//! Small fixtures shared by the integration tests.
#![allow(dead_code)]

use mmfield::field::{Architecture, MlpConfig, Model, ModelSpec};
use mmfield::grid::{Aabb, GridConfig};
use mmfield::nn::Activation;
use mmfield::scene::{apply_knob, street_scene, Dataset, Preset, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Four levels of two features over 2^10 slots, 4 to 32 cells.
pub fn tiny_grid(bounds: Aabb) -> GridConfig {
    GridConfig {
        levels: 4,
        feature_dim: 2,
        table_size_log2: 10,
        base_resolution: 4,
        growth_factor: 2.0,
        bounds,
    }
    .with_finest_resolution(32)
}

pub fn tiny_mlp() -> MlpConfig {
    MlpConfig {
        geo_hidden: vec![16],
        head_hidden: vec![16],
        geo_feature_dim: 7,
        activation: Activation::Softplus,
    }
}

/// Spec with a mask horizon that fits the four-level grid.
pub fn spec(arch: Architecture) -> ModelSpec {
    ModelSpec::new(arch).with_beta(2.0)
}

pub fn random_table(grid: &GridConfig, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..grid.param_count())
        .map(|_| rng.gen_range(-scale..scale))
        .collect()
}

/// Builds `spec`, handing SGI-based architectures a random pretrained grid.
pub fn model(spec: ModelSpec, grid: &GridConfig, seed: u64) -> Model {
    let table = spec
        .architecture
        .uses_sgi()
        .then(|| random_table(grid, seed + 1000, 0.5));
    Model::new(spec, grid.clone(), tiny_mlp(), seed, table.as_deref()).unwrap()
}

pub fn tiny_scene(preset: Preset) -> SceneSpec {
    let mut scene = street_scene(preset);
    for k in [
        "camera_width=16",
        "camera_height=12",
        "lidar_beams=8",
        "lidar_azimuth=32",
        "poses=6",
        "test_every=3",
    ] {
        apply_knob(&mut scene, k).unwrap();
    }
    scene
}

pub fn tiny_dataset(preset: Preset) -> Dataset {
    Dataset::generate(&tiny_scene(preset), 0).unwrap()
}

pub fn random_points(bounds: &Aabb, n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| std::array::from_fn(|k| rng.gen_range(bounds.min[k]..bounds.max[k])))
        .collect()
}
