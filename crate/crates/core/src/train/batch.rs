//! Random training-ray batches, one independent stream per modality.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::render::{Modality, Ray};
use crate::scene::{Dataset, Split};
use crate::train::TrainConfig;

/// Frame and flat ray index of a drawn ray.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RayRef {
    pub frame: usize,
    pub index: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Batch {
    pub lidar: Vec<Ray>,
    pub camera: Vec<Ray>,
    pub lidar_refs: Vec<RayRef>,
    pub camera_refs: Vec<RayRef>,
}

impl Batch {
    pub fn rays(&self, m: Modality) -> &[Ray] {
        match m {
            Modality::Lidar => &self.lidar,
            Modality::Camera => &self.camera,
        }
    }
}

/// Number of rays of each modality a step draws.
pub fn batch_sizes(config: &TrainConfig, has_lidar: bool, has_camera: bool) -> (usize, usize) {
    let n_l = if has_lidar && config.lambda_l > 0.0 {
        config.rays_per_step
    } else {
        0
    };
    let n_c = if has_camera && config.lambda_c > 0.0 {
        config.rays_per_step
    } else {
        0
    };
    (n_l, n_c)
}

fn draw(
    dataset: &Dataset,
    modality: Modality,
    frames: &[usize],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Ray>, Vec<RayRef>)> {
    if n == 0 {
        return Ok((Vec::new(), Vec::new()));
    }
    if frames.is_empty() {
        return Err(Error::Empty("training frames"));
    }
    let per_frame = dataset.rays_per_frame(modality);
    if per_frame == 0 {
        return Err(Error::config(format!(
            "dataset has no {} rays",
            modality.name()
        )));
    }
    let mut rays = Vec::with_capacity(n);
    let mut refs = Vec::with_capacity(n);
    let mut attempts = 0;
    while rays.len() < n {
        attempts += 1;
        if attempts > 100 * n {
            return Err(Error::config(format!(
                "no {} ray enters the domain box",
                modality.name()
            )));
        }
        let frame = frames[rng.gen_range(0..frames.len())];
        let index = rng.gen_range(0..per_frame);
        if let Some(r) = dataset.ray(modality, frame, index) {
            rays.push(r);
            refs.push(RayRef { frame, index });
        }
    }
    Ok((rays, refs))
}

/// Draws `(n_lidar, n_camera)` rays uniformly over training frames and
/// their rays; each modality consumes only its own generator.
pub fn make_batch(
    dataset: &Dataset,
    sizes: (usize, usize),
    lidar_rng: &mut ChaCha8Rng,
    camera_rng: &mut ChaCha8Rng,
) -> Result<Batch> {
    let frames = dataset.frame_indices(Split::Train);
    let (lidar, lidar_refs) = draw(dataset, Modality::Lidar, &frames, sizes.0, lidar_rng)?;
    let (camera, camera_refs) = draw(dataset, Modality::Camera, &frames, sizes.1, camera_rng)?;
    Ok(Batch {
        lidar,
        camera,
        lidar_refs,
        camera_refs,
    })
}
