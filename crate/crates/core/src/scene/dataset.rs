//! Datasets: generation, on-disk layout and ray access.

use std::path::{Path, PathBuf};

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::render::{Intrinsics, LidarPattern, Modality, Ray, Target};
use crate::scene::render::{render_gt_camera, render_gt_lidar, LidarScan};
use crate::scene::spec::SceneSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::config(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub index: usize,
    pub split: Split,
    /// Declared camera pose (optical frame to world).
    pub camera_pose: Isometry3<f64>,
    /// Declared LiDAR pose (sensor frame to world).
    pub lidar_pose: Isometry3<f64>,
    /// Row-major RGB.
    pub image: Vec<f64>,
    pub scan: LidarScan,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scene: SceneSpec,
    pub seed: u64,
    pub frames: Vec<Frame>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LidarSidecar {
    n_beams: usize,
    n_azimuth: usize,
    elevation_range: [f64; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct FrameEntry {
    index: usize,
    split: Split,
    camera_pose: Isometry3<f64>,
    lidar_pose: Isometry3<f64>,
    image_ppm: String,
    image_f32: String,
    lidar_range: String,
    lidar_intensity: String,
    lidar_drop: String,
    lidar_sidecar: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    scene: SceneSpec,
    seed: u64,
    intrinsics: Intrinsics,
    lidar_pattern: LidarPattern,
    frames: Vec<FrameEntry>,
}

impl Dataset {
    /// Renders every trajectory pose from the true sensor poses; frames
    /// carry the declared poses. Rendering is noise-free, so the seed is
    /// only recorded.
    pub fn generate(scene: &SceneSpec, seed: u64) -> Result<Self> {
        scene.validate()?;
        let frames = (0..scene.frame_count())
            .map(|i| Frame {
                index: i,
                split: if scene.is_test(i) {
                    Split::Test
                } else {
                    Split::Train
                },
                camera_pose: scene.declared_camera_pose(i),
                lidar_pose: scene.declared_lidar_pose(i),
                image: render_gt_camera(
                    scene,
                    &scene.true_camera_pose(i),
                    &scene.camera.intrinsics,
                ),
                scan: render_gt_lidar(
                    scene,
                    &scene.true_lidar_pose(i),
                    &scene.lidar.pattern,
                    scene.lidar.max_range,
                ),
            })
            .collect();
        Ok(Self {
            scene: scene.clone(),
            seed,
            frames,
        })
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.scene.camera.intrinsics
    }

    pub fn pattern(&self) -> &LidarPattern {
        &self.scene.lidar.pattern
    }

    pub fn frames(&self, split: Split) -> impl Iterator<Item = &Frame> {
        self.frames.iter().filter(move |f| f.split == split)
    }

    pub fn frame_indices(&self, split: Split) -> Vec<usize> {
        self.frames(split).map(|f| f.index).collect()
    }

    /// Camera ray through pixel `(u, v)` of a frame, clipped to the domain box.
    pub fn camera_ray(&self, frame: usize, u: usize, v: usize) -> Option<Ray> {
        let f = &self.frames[frame];
        let k = self.intrinsics();
        let mut ray = crate::render::camera_rays(&f.camera_pose, k, &[(u, v)]).pop()?;
        let p = (v * k.width + u) * 3;
        ray.target = Some(Target::Color([f.image[p], f.image[p + 1], f.image[p + 2]]));
        ray.clip(&self.scene.bounds)
    }

    /// LiDAR ray of range-image cell `(beam, column)`, clipped to the domain box.
    pub fn lidar_ray(&self, frame: usize, beam: usize, column: usize) -> Option<Ray> {
        let f = &self.frames[frame];
        let pat = self.pattern();
        let dir = f.lidar_pose.rotation * pat.direction(beam, column);
        let mut ray = Ray::new(f.lidar_pose.translation.vector, dir, Modality::Lidar);
        let c = beam * pat.n_azimuth + column;
        ray.target = Some(Target::Lidar {
            depth: f.scan.range[c],
            intensity: f.scan.intensity[c],
            drop: f.scan.drop[c],
        });
        ray.clip(&self.scene.bounds)
    }

    /// Ray by flat index within a frame: pixels row-major for the camera,
    /// range-image cells row-major for LiDAR.
    pub fn ray(&self, modality: Modality, frame: usize, index: usize) -> Option<Ray> {
        match modality {
            Modality::Camera => {
                let w = self.intrinsics().width;
                self.camera_ray(frame, index % w, index / w)
            }
            Modality::Lidar => {
                let n = self.pattern().n_azimuth;
                self.lidar_ray(frame, index / n, index % n)
            }
        }
    }

    pub fn rays_per_frame(&self, modality: Modality) -> usize {
        match modality {
            Modality::Camera => self.intrinsics().pixel_count(),
            Modality::Lidar => self.pattern().ray_count(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        io::create_dir(&dir.join("images"))?;
        io::create_dir(&dir.join("lidar"))?;
        let k = *self.intrinsics();
        let pat = *self.pattern();
        let sidecar = LidarSidecar {
            n_beams: pat.n_beams,
            n_azimuth: pat.n_azimuth,
            elevation_range: pat.elevation_range,
        };
        let mut entries = Vec::new();
        for f in &self.frames {
            let stem = format!("frame_{:03}", f.index);
            let e = FrameEntry {
                index: f.index,
                split: f.split,
                camera_pose: f.camera_pose,
                lidar_pose: f.lidar_pose,
                image_ppm: format!("images/{stem}.ppm"),
                image_f32: format!("images/{stem}.f32"),
                lidar_range: format!("lidar/{stem}_range.f32"),
                lidar_intensity: format!("lidar/{stem}_intensity.f32"),
                lidar_drop: format!("lidar/{stem}_drop.f32"),
                lidar_sidecar: format!("lidar/{stem}.json"),
            };
            io::write_ppm(&dir.join(&e.image_ppm), k.width, k.height, &f.image)?;
            io::write_f32(&dir.join(&e.image_f32), &f.image)?;
            io::write_f32(&dir.join(&e.lidar_range), &f.scan.range)?;
            io::write_f32(&dir.join(&e.lidar_intensity), &f.scan.intensity)?;
            io::write_f32(&dir.join(&e.lidar_drop), &f.scan.drop)?;
            io::write_json(&dir.join(&e.lidar_sidecar), &sidecar)?;
            entries.push(e);
        }
        let manifest = Manifest {
            scene: self.scene.clone(),
            seed: self.seed,
            intrinsics: k,
            lidar_pattern: pat,
            frames: entries,
        };
        io::write_json(&dir.join("manifest.json"), &manifest)
    }

    /// Loads a dataset directory. Values pass through `f32` on disk.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = io::read_json(&dir.join("manifest.json"))?;
        manifest.scene.validate()?;
        let k = manifest.intrinsics;
        let n_lidar = manifest.lidar_pattern.ray_count();
        let check = |path: PathBuf, v: Vec<f64>, n: usize| -> Result<Vec<f64>> {
            if v.len() != n {
                return Err(Error::config(format!(
                    "{}: expected {n} values, found {}",
                    path.display(),
                    v.len()
                )));
            }
            Ok(v)
        };
        let mut frames = Vec::new();
        for e in &manifest.frames {
            let read = |rel: &str, n: usize| -> Result<Vec<f64>> {
                let p = dir.join(rel);
                let v = io::read_f32(&p)?;
                check(p, v, n)
            };
            frames.push(Frame {
                index: e.index,
                split: e.split,
                camera_pose: e.camera_pose,
                lidar_pose: e.lidar_pose,
                image: read(&e.image_f32, k.pixel_count() * 3)?,
                scan: LidarScan {
                    range: read(&e.lidar_range, n_lidar)?,
                    intensity: read(&e.lidar_intensity, n_lidar)?,
                    drop: read(&e.lidar_drop, n_lidar)?,
                },
            });
        }
        Ok(Self {
            scene: manifest.scene,
            seed: manifest.seed,
            frames,
        })
    }

    /// Rounds every stored value through `f32`, matching what [`Dataset::load`]
    /// returns for a written dataset.
    pub fn quantized(mut self) -> Self {
        let q = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = *x as f32 as f64);
        for f in &mut self.frames {
            q(&mut f.image);
            q(&mut f.scan.range);
            q(&mut f.scan.intensity);
            q(&mut f.scan.drop);
        }
        self
    }
}

/// Pixel distance between where each LiDAR return lands when projected with
/// the declared calibration and where that surface point actually appears
/// in the image (projected from the true camera pose). Returns one value
/// per return visible in both.
pub fn reprojection_errors(scene: &SceneSpec, frame: usize, scan: &LidarScan) -> Vec<f64> {
    let pat = &scene.lidar.pattern;
    let k = &scene.camera.intrinsics;
    let decl_l = scene.declared_lidar_pose(frame);
    let true_l = scene.true_lidar_pose(frame);
    let decl_c = scene.declared_camera_pose(frame).inverse();
    let true_c = scene.true_camera_pose(frame).inverse();
    let in_image = |(u, v): (f64, f64)| {
        u >= -0.5 && v >= -0.5 && u <= k.width as f64 - 0.5 && v <= k.height as f64 - 0.5
    };
    let mut out = Vec::new();
    for b in 0..pat.n_beams {
        for c in 0..pat.n_azimuth {
            let i = b * pat.n_azimuth + c;
            if scan.drop[i] > 0.5 {
                continue;
            }
            let local = pat.direction(b, c) * scan.range[i];
            let p_decl = decl_l.transform_point(&local.into());
            let p_true = true_l.transform_point(&local.into());
            let a = k.project(&(decl_c.transform_point(&p_decl)).coords);
            let t = k.project(&(true_c.transform_point(&p_true)).coords);
            if let (Some(a), Some(t)) = (a, t) {
                if in_image(a) && in_image(t) {
                    out.push(((a.0 - t.0).powi(2) + (a.1 - t.1).powi(2)).sqrt());
                }
            }
        }
    }
    out
}
