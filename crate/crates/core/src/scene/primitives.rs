//! Analytic primitives and nearest-hit ray casting.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::render::Modality;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub albedo: [f64; 3],
    pub lidar_reflectivity: f64,
    /// Checkerboard period in meters on the x-y plane; alternate squares
    /// are darkened to half albedo.
    #[serde(default)]
    pub checker: Option<f64>,
}

impl Material {
    pub fn plain(albedo: [f64; 3], lidar_reflectivity: f64) -> Self {
        Self {
            albedo,
            lidar_reflectivity,
            checker: None,
        }
    }

    pub fn albedo_at(&self, p: &Vector3<f64>) -> [f64; 3] {
        match self.checker {
            Some(period) if period > 0.0 => {
                let parity = ((p.x / period).floor() + (p.y / period).floor()).rem_euclid(2.0);
                if parity < 0.5 {
                    self.albedo
                } else {
                    self.albedo.map(|a| 0.5 * a)
                }
            }
            _ => self.albedo,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Axis-aligned box.
    Cuboid {
        min: [f64; 3],
        max: [f64; 3],
    },
    /// Vertical cylinder with closed caps.
    Cylinder {
        center: [f64; 2],
        radius: f64,
        z_min: f64,
        z_max: f64,
    },
    /// Horizontal plane `z = height`.
    Plane {
        height: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub material: Material,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub primitive: usize,
    /// Unit normal facing the incoming ray.
    pub normal: Vector3<f64>,
}

const T_MIN: f64 = 1e-9;

/// Smallest root of `a t^2 + 2 b t + c` above `T_MIN`.
fn quadratic_root(a: f64, b: f64, c: f64) -> Option<f64> {
    if a.abs() < 1e-300 {
        return None;
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    // numerically stable pair
    let q = if b > 0.0 { -(b + s) } else { -b + s };
    let (r1, r2) = if q != 0.0 { (q / a, c / q) } else { (0.0, 0.0) };
    let (lo, hi) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
    [lo, hi].into_iter().find(|t| *t > T_MIN)
}

impl Shape {
    /// Nearest positive intersection; `dilation` grows sphere and cylinder radii.
    pub fn intersect(
        &self,
        o: &Vector3<f64>,
        d: &Vector3<f64>,
        dilation: f64,
    ) -> Option<(f64, Vector3<f64>)> {
        let hit = match *self {
            Shape::Sphere { center, radius } => {
                let r = radius + dilation;
                let oc = o - Vector3::from(center);
                let t = quadratic_root(d.dot(d), oc.dot(d), oc.dot(&oc) - r * r)?;
                let n = (o + d * t - Vector3::from(center)) / r;
                (t, n)
            }
            Shape::Cuboid { min, max } => {
                let mut t0 = f64::NEG_INFINITY;
                let mut t1 = f64::INFINITY;
                let mut axis = 0;
                let mut sign = 0.0;
                for a in 0..3 {
                    if d[a].abs() < 1e-300 {
                        if o[a] < min[a] || o[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let (mut ta, mut tb) = ((min[a] - o[a]) / d[a], (max[a] - o[a]) / d[a]);
                    let mut s = -1.0;
                    if ta > tb {
                        std::mem::swap(&mut ta, &mut tb);
                        s = 1.0;
                    }
                    if ta > t0 {
                        t0 = ta;
                        axis = a;
                        sign = s;
                    }
                    t1 = t1.min(tb);
                }
                if t0 > t1 || t0 <= T_MIN {
                    return None;
                }
                let mut n = Vector3::zeros();
                n[axis] = sign;
                (t0, n)
            }
            Shape::Cylinder {
                center,
                radius,
                z_min,
                z_max,
            } => {
                let r = radius + dilation;
                let (ox, oy) = (o.x - center[0], o.y - center[1]);
                let mut best: Option<(f64, Vector3<f64>)> = None;
                if let Some(t) = quadratic_root(
                    d.x * d.x + d.y * d.y,
                    ox * d.x + oy * d.y,
                    ox * ox + oy * oy - r * r,
                ) {
                    let z = o.z + t * d.z;
                    if (z_min..=z_max).contains(&z) {
                        best = Some((t, Vector3::new((ox + t * d.x) / r, (oy + t * d.y) / r, 0.0)));
                    }
                }
                if d.z.abs() > 1e-300 {
                    for (zc, nz) in [(z_max, 1.0), (z_min, -1.0)] {
                        let t = (zc - o.z) / d.z;
                        if t > T_MIN && best.map_or(true, |(bt, _)| t < bt) {
                            let (x, y) = (ox + t * d.x, oy + t * d.y);
                            if x * x + y * y <= r * r {
                                best = Some((t, Vector3::new(0.0, 0.0, nz)));
                            }
                        }
                    }
                }
                best?
            }
            Shape::Plane { height } => {
                if d.z.abs() < 1e-12 {
                    return None;
                }
                let t = (height - o.z) / d.z;
                if t <= T_MIN {
                    return None;
                }
                (t, Vector3::z())
            }
        };
        let (t, mut n) = hit;
        if n.dot(d) > 0.0 {
            n = -n;
        }
        Some((t, n))
    }

    /// Whether this shape's radius grows under LiDAR dilation.
    pub fn dilates(&self) -> bool {
        matches!(self, Shape::Sphere { .. } | Shape::Cylinder { .. })
    }
}

/// Nearest hit over all primitives. LiDAR rays see sphere and cylinder radii
/// grown by `lidar_dilation`.
pub fn cast_ray(
    origin: &Vector3<f64>,
    direction: &Vector3<f64>,
    primitives: &[Primitive],
    modality: Modality,
    lidar_dilation: f64,
) -> Option<Hit> {
    let mut best: Option<Hit> = None;
    for (i, p) in primitives.iter().enumerate() {
        let dil = if modality == Modality::Lidar && p.shape.dilates() {
            lidar_dilation
        } else {
            0.0
        };
        if let Some((t, normal)) = p.shape.intersect(origin, direction, dil) {
            if best.map_or(true, |b| t < b.t) {
                best = Some(Hit {
                    t,
                    primitive: i,
                    normal,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prim(shape: Shape) -> Primitive {
        Primitive {
            shape,
            material: Material::plain([1.0; 3], 1.0),
        }
    }

    #[test]
    fn sphere_on_axis() {
        let s = [prim(Shape::Sphere {
            center: [0.0, 0.0, 5.0],
            radius: 1.0,
        })];
        let h = cast_ray(&Vector3::zeros(), &Vector3::z(), &s, Modality::Camera, 0.0).unwrap();
        assert!((h.t - 4.0).abs() < 1e-12);
        assert!((h.normal - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn parallel_to_ground_misses() {
        let s = [prim(Shape::Plane { height: 0.0 })];
        assert!(cast_ray(
            &Vector3::new(0.0, 0.0, 1.0),
            &Vector3::x(),
            &s,
            Modality::Lidar,
            0.0
        )
        .is_none());
        let down = Vector3::new(1.0, 0.0, -1.0).normalize();
        let h = cast_ray(
            &Vector3::new(0.0, 0.0, 1.0),
            &down,
            &s,
            Modality::Lidar,
            0.0,
        )
        .unwrap();
        assert!((h.t - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dilated_pole_grazing_ray() {
        let s = [prim(Shape::Cylinder {
            center: [0.0, 0.0],
            radius: 0.1,
            z_min: 0.0,
            z_max: 2.5,
        })];
        let o = Vector3::new(-5.0, 0.12, 1.0);
        assert!(cast_ray(&o, &Vector3::x(), &s, Modality::Camera, 0.05).is_none());
        let h = cast_ray(&o, &Vector3::x(), &s, Modality::Lidar, 0.05).unwrap();
        let want = 5.0 - (0.15f64 * 0.15 - 0.12 * 0.12).sqrt();
        assert!((h.t - want).abs() < 1e-12);
    }

    #[test]
    fn cuboid_face_and_normal() {
        let s = [prim(Shape::Cuboid {
            min: [2.0, -1.0, -1.0],
            max: [3.0, 1.0, 1.0],
        })];
        let h = cast_ray(&Vector3::zeros(), &Vector3::x(), &s, Modality::Camera, 0.0).unwrap();
        assert!((h.t - 2.0).abs() < 1e-12);
        assert_eq!(h.normal, Vector3::new(-1.0, 0.0, 0.0));
        assert!(cast_ray(&Vector3::zeros(), &-Vector3::x(), &s, Modality::Camera, 0.0).is_none());
    }

    #[test]
    fn cylinder_cap_from_above() {
        let s = [prim(Shape::Cylinder {
            center: [0.0, 0.0],
            radius: 0.5,
            z_min: 0.0,
            z_max: 2.0,
        })];
        let h = cast_ray(
            &Vector3::new(0.1, 0.0, 5.0),
            &-Vector3::z(),
            &s,
            Modality::Camera,
            0.0,
        )
        .unwrap();
        assert!((h.t - 3.0).abs() < 1e-12);
        assert_eq!(h.normal, Vector3::z());
    }

    #[test]
    fn checker_alternates() {
        let m = Material {
            checker: Some(1.0),
            ..Material::plain([0.8; 3], 0.5)
        };
        assert_eq!(m.albedo_at(&Vector3::new(0.5, 0.5, 0.0)), [0.8; 3]);
        assert_eq!(m.albedo_at(&Vector3::new(1.5, 0.5, 0.0)), [0.4; 3]);
        assert_eq!(m.albedo_at(&Vector3::new(-0.5, 0.5, 0.0)), [0.4; 3]);
    }
}
