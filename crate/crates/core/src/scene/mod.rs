//! Synthetic street scenes with analytic ground truth, sensor simulation
//! and injectable camera/LiDAR misalignment.

pub mod dataset;
pub mod primitives;
pub mod render;
pub mod spec;

pub use dataset::{reprojection_errors, Dataset, Frame, Split};
pub use primitives::{cast_ray, Hit, Material, Primitive, Shape};
pub use render::{lidar_intensity, render_gt_camera, render_gt_lidar, shade, LidarScan};
pub use spec::{
    apply_knob, street_scene, CameraRig, LidarRig, MisalignmentSpec, Preset, SceneSpec, TimedPose,
};
