//! Scene description: primitives, sensor rigs, trajectory and misalignment.

use nalgebra::{Isometry3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Aabb;
use crate::render::{Intrinsics, LidarPattern};
use crate::scene::primitives::{Material, Primitive, Shape};

/// Rig pose at a timestamp. The rig frame has x forward, y left, z up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedPose {
    pub time: f64,
    pub pose: Isometry3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub intrinsics: Intrinsics,
    /// Optical frame (z forward, x right, y down) to rig frame.
    pub extrinsic: Isometry3<f64>,
    pub hfov_deg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LidarRig {
    pub pattern: LidarPattern,
    /// Sensor frame to rig frame.
    pub extrinsic: Isometry3<f64>,
    pub max_range: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MisalignmentSpec {
    /// Rotation of the true camera mount about the rig x, y, z axes (radians).
    pub rotation: [f64; 3],
    /// Offset of the true camera mount in the rig frame (meters).
    pub translation: [f64; 3],
    /// Radius growth of spheres and cylinders as seen by the LiDAR (meters).
    pub lidar_dilation: f64,
    /// Shift of the LiDAR sampling time along the trajectory (seconds).
    pub temporal_offset: f64,
}

impl MisalignmentSpec {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }

    /// Camera mount perturbation, expressed in the rig frame.
    pub fn camera_delta(&self) -> Isometry3<f64> {
        let [rx, ry, rz] = self.rotation;
        let rot = Rotation3::from_euler_angles(rx, ry, rz);
        Isometry3::from_parts(
            Translation3::from(Vector3::from(self.translation)),
            UnitQuaternion::from_rotation_matrix(&rot),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let all = self
            .rotation
            .iter()
            .chain(&self.translation)
            .chain([&self.lidar_dilation, &self.temporal_offset]);
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::config("misalignment knobs must be finite"));
        }
        if self.lidar_dilation < 0.0 {
            return Err(Error::config("lidar_dilation must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub name: String,
    pub bounds: Aabb,
    pub primitives: Vec<Primitive>,
    pub trajectory: Vec<TimedPose>,
    pub camera: CameraRig,
    pub lidar: LidarRig,
    #[serde(default)]
    pub misalignment: MisalignmentSpec,
    /// Unit vector towards the directional light.
    pub light_dir: [f64; 3],
    pub ambient: f64,
    /// Range scale `s` of the LiDAR falloff `1 / (1 + (t / s)^2)`.
    pub intensity_falloff: f64,
    /// Every `test_every`-th pose (starting at index 0) is held out.
    pub test_every: usize,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.misalignment.validate()?;
        if self.trajectory.is_empty() {
            return Err(Error::config("scene needs at least one trajectory pose"));
        }
        if self.trajectory.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::config("trajectory times must increase"));
        }
        if !(self.camera.hfov_deg > 0.0 && self.camera.hfov_deg < 180.0) {
            return Err(Error::config(
                "camera field of view must lie in (0, 180) degrees",
            ));
        }
        let k = &self.camera.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0 && k.width > 0 && k.height > 0) {
            return Err(Error::config("camera intrinsics must be positive"));
        }
        let p = &self.lidar.pattern;
        if p.n_beams == 0 || p.n_azimuth == 0 || !(self.lidar.max_range > 0.0) {
            return Err(Error::config("lidar pattern and range must be positive"));
        }
        if self.test_every == 0 {
            return Err(Error::config("test_every must be positive"));
        }
        for (i, prim) in self.primitives.iter().enumerate() {
            let inside = match prim.shape {
                Shape::Sphere { center, radius } => {
                    let lo = center.map(|c| c - radius);
                    let hi = center.map(|c| c + radius);
                    self.bounds.contains(lo, 1e-9) && self.bounds.contains(hi, 1e-9)
                }
                Shape::Cuboid { min, max } => {
                    self.bounds.contains(min, 1e-9) && self.bounds.contains(max, 1e-9)
                }
                Shape::Cylinder {
                    center,
                    radius,
                    z_min,
                    z_max,
                } => {
                    self.bounds
                        .contains([center[0] - radius, center[1] - radius, z_min], 1e-9)
                        && self
                            .bounds
                            .contains([center[0] + radius, center[1] + radius, z_max], 1e-9)
                }
                Shape::Plane { height } => {
                    height >= self.bounds.min[2] && height <= self.bounds.max[2]
                }
            };
            if !inside {
                return Err(Error::config(format!(
                    "primitive {i} leaves the domain box"
                )));
            }
        }
        Ok(())
    }

    /// Rig pose at time `t`: linear interpolation of translation and slerp
    /// of rotation, extrapolating linearly past either end.
    pub fn rig_pose_at(&self, t: f64) -> Isometry3<f64> {
        let tr = &self.trajectory;
        if tr.len() == 1 {
            return tr[0].pose;
        }
        let i = match tr.iter().position(|p| p.time > t) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => tr.len() - 2,
        };
        let (a, b) = (&tr[i], &tr[i + 1]);
        let s = (t - a.time) / (b.time - a.time);
        let trans = a
            .pose
            .translation
            .vector
            .lerp(&b.pose.translation.vector, s);
        let rot = if (0.0..=1.0).contains(&s) {
            a.pose.rotation.slerp(&b.pose.rotation, s)
        } else {
            let rel = a.pose.rotation.rotation_to(&b.pose.rotation);
            rel.powf(s) * a.pose.rotation
        };
        Isometry3::from_parts(Translation3::from(trans), rot)
    }

    pub fn frame_count(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_test(&self, frame: usize) -> bool {
        frame % self.test_every == 0
    }

    /// Camera pose used by the data loader.
    pub fn declared_camera_pose(&self, frame: usize) -> Isometry3<f64> {
        self.trajectory[frame].pose * self.camera.extrinsic
    }

    /// Camera pose the images are actually rendered from.
    pub fn true_camera_pose(&self, frame: usize) -> Isometry3<f64> {
        self.trajectory[frame].pose * self.misalignment.camera_delta() * self.camera.extrinsic
    }

    pub fn declared_lidar_pose(&self, frame: usize) -> Isometry3<f64> {
        self.trajectory[frame].pose * self.lidar.extrinsic
    }

    pub fn true_lidar_pose(&self, frame: usize) -> Isometry3<f64> {
        let t = self.trajectory[frame].time + self.misalignment.temporal_offset;
        self.rig_pose_at(t) * self.lidar.extrinsic
    }
}

/// Optical frame (z forward, x right, y down) to rig frame (x forward,
/// y left, z up), mounted at `height`.
pub fn forward_camera_mount(height: f64) -> Isometry3<f64> {
    let m = nalgebra::Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0);
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    Isometry3::from_parts(Translation3::new(0.0, 0.0, height), rot)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    AlignedStreet,
    MisalignedStreet,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aligned-street" => Ok(Preset::AlignedStreet),
            "misaligned-street" => Ok(Preset::MisalignedStreet),
            _ => Err(Error::config(format!("unknown preset `{s}`"))),
        }
    }
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::AlignedStreet => "aligned-street",
            Preset::MisalignedStreet => "misaligned-street",
        }
    }
}

/// Misalignment of the misaligned-street preset.
pub fn street_misalignment() -> MisalignmentSpec {
    MisalignmentSpec {
        rotation: [0.0, 0.0, 0.4f64.to_radians()],
        translation: [0.0, 0.02, 0.0],
        lidar_dilation: 0.03,
        temporal_offset: 0.05,
    }
}

/// Street scene: ground, two facades, three poles and a sphere, observed
/// from a rig driving along +x.
pub fn street_scene(preset: Preset) -> SceneSpec {
    let bounds = Aabb::new([-8.0, -5.0, -0.5], [8.0, 5.0, 3.5]);
    let pole = |x: f64, y: f64| Primitive {
        shape: Shape::Cylinder {
            center: [x, y],
            radius: 0.1,
            z_min: 0.0,
            z_max: 2.5,
        },
        material: Material::plain([0.9, 0.85, 0.2], 0.9),
    };
    let primitives = vec![
        Primitive {
            shape: Shape::Plane { height: 0.0 },
            material: Material {
                albedo: [0.6, 0.6, 0.62],
                lidar_reflectivity: 0.3,
                checker: Some(1.0),
            },
        },
        Primitive {
            shape: Shape::Cuboid {
                min: [-5.0, 3.0, 0.0],
                max: [-0.5, 4.5, 3.0],
            },
            material: Material::plain([0.8, 0.35, 0.3], 0.6),
        },
        Primitive {
            shape: Shape::Cuboid {
                min: [1.5, -4.5, 0.0],
                max: [6.0, -3.0, 2.5],
            },
            material: Material::plain([0.3, 0.45, 0.85], 0.5),
        },
        pole(3.0, 1.5),
        pole(5.0, -1.6),
        pole(-3.0, -1.8),
        Primitive {
            shape: Shape::Sphere {
                center: [5.5, 1.2, 0.7],
                radius: 0.7,
            },
            material: Material::plain([0.3, 0.8, 0.35], 0.7),
        },
    ];
    let n_poses = 24;
    let dt = 0.1;
    let speed = 1.5;
    let x0 = -0.5 * speed * dt * (n_poses - 1) as f64;
    let trajectory = (0..n_poses)
        .map(|i| TimedPose {
            time: i as f64 * dt,
            pose: Isometry3::translation(x0 + speed * dt * i as f64, 0.0, 0.0),
        })
        .collect();
    let intrinsics = Intrinsics::from_hfov(128, 96, 90.0);
    SceneSpec {
        name: preset.name().to_string(),
        bounds,
        primitives,
        trajectory,
        camera: CameraRig {
            intrinsics,
            extrinsic: forward_camera_mount(1.5),
            hfov_deg: 90.0,
        },
        lidar: LidarRig {
            pattern: LidarPattern {
                n_beams: 32,
                elevation_range: [-15.0, 5.0],
                n_azimuth: 256,
            },
            extrinsic: Isometry3::translation(0.0, 0.0, 1.8),
            max_range: 30.0,
        },
        misalignment: match preset {
            Preset::AlignedStreet => MisalignmentSpec::default(),
            Preset::MisalignedStreet => street_misalignment(),
        },
        light_dir: Vector3::new(-0.5, 0.3, 0.8).normalize().into(),
        ambient: 0.2,
        intensity_falloff: 5.0,
        test_every: 6,
    }
}

/// Applies a `key=value` override to the misalignment or sensor settings.
pub fn apply_knob(scene: &mut SceneSpec, knob: &str) -> Result<()> {
    let (key, value) = knob
        .split_once('=')
        .ok_or_else(|| Error::config(format!("knob `{knob}` is not key=value")))?;
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("knob `{key}` needs a number, got `{value}`")))?;
    let m = &mut scene.misalignment;
    match key.trim() {
        "yaw_deg" => m.rotation[2] = v.to_radians(),
        "pitch_deg" => m.rotation[1] = v.to_radians(),
        "roll_deg" => m.rotation[0] = v.to_radians(),
        "tx" => m.translation[0] = v,
        "ty" => m.translation[1] = v,
        "tz" => m.translation[2] = v,
        "dilation" => m.lidar_dilation = v,
        "temporal_offset" => m.temporal_offset = v,
        "camera_width" | "camera_height" => {
            let k = scene.camera.intrinsics;
            let (w, h) = if key.trim() == "camera_width" {
                (v as usize, k.height)
            } else {
                (k.width, v as usize)
            };
            scene.camera.intrinsics = Intrinsics::from_hfov(w, h, scene.camera.hfov_deg);
        }
        "lidar_beams" => scene.lidar.pattern.n_beams = v as usize,
        "lidar_azimuth" => scene.lidar.pattern.n_azimuth = v as usize,
        "poses" => {
            let n = v as usize;
            if n == 0 {
                return Err(Error::config("poses must be positive"));
            }
            let dt = scene
                .trajectory
                .get(1)
                .map_or(0.1, |p| p.time - scene.trajectory[0].time);
            let first = scene.trajectory[0].pose.translation.vector;
            let step = scene
                .trajectory
                .get(1)
                .map_or(Vector3::new(0.15, 0.0, 0.0), |p| {
                    p.pose.translation.vector - first
                });
            let center = first + step * (scene.trajectory.len() - 1) as f64 * 0.5;
            let start = center - step * (n - 1) as f64 * 0.5;
            scene.trajectory = (0..n)
                .map(|i| TimedPose {
                    time: i as f64 * dt,
                    pose: Isometry3::translation(
                        start.x + step.x * i as f64,
                        start.y + step.y * i as f64,
                        start.z + step.z * i as f64,
                    ),
                })
                .collect();
        }
        "test_every" => scene.test_every = v as usize,
        other => return Err(Error::config(format!("unknown knob `{other}`"))),
    }
    scene.validate()
}
