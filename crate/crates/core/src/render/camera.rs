use nalgebra::{Matrix3, Matrix4, Vector3};

use crate::error::{Error, Result};
use crate::field::Aabb;

/// World-space ray with a unit direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
}

impl Ray {
    /// Normalizes `dir`.
    pub fn new(origin: [f64; 3], dir: [f64; 3]) -> Result<Self> {
        let n = norm(dir);
        if !(n > 1e-12) || !n.is_finite() {
            return Err(Error::ZeroDirection);
        }
        Ok(Self {
            origin,
            dir: [dir[0] / n, dir[1] / n, dir[2] / n],
        })
    }

    #[inline]
    pub fn at(&self, t: f64) -> [f64; 3] {
        [
            self.origin[0] + t * self.dir[0],
            self.origin[1] + t * self.dir[1],
            self.origin[2] + t * self.dir[2],
        ]
    }
}

#[inline]
pub(crate) fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Pinhole camera looking along its local `-z`, `x` right, `y` up.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    /// Focal length in pixels.
    pub focal: f64,
    pub cam_to_world: Matrix4<f64>,
}

impl Camera {
    pub fn new(width: u32, height: u32, focal: f64, cam_to_world: Matrix4<f64>) -> Result<Self> {
        if !(focal > 0.0) {
            return Err(Error::InvalidArgument(format!("focal length {focal} must be positive")));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument("image must have at least one pixel".into()));
        }
        let rot: Matrix3<f64> = cam_to_world.fixed_view::<3, 3>(0, 0).into_owned();
        let err = (rot.transpose() * rot - Matrix3::identity()).abs().max();
        if err > 1e-5 {
            return Err(Error::InvalidArgument(format!(
                "camera rotation is not orthonormal (error {err:.2e})"
            )));
        }
        Ok(Self {
            width,
            height,
            focal,
            cam_to_world,
        })
    }

    /// Focal length from the horizontal field of view, as stored in
    /// `transforms_*.json` (`camera_angle_x`).
    pub fn focal_from_fov(width: u32, camera_angle_x: f64) -> f64 {
        0.5 * width as f64 / (0.5 * camera_angle_x).tan()
    }

    pub fn from_fov(width: u32, height: u32, camera_angle_x: f64, cam_to_world: Matrix4<f64>) -> Result<Self> {
        Self::new(width, height, Self::focal_from_fov(width, camera_angle_x), cam_to_world)
    }

    /// Camera at `eye` looking at `target`; `up` picks the roll.
    pub fn look_at(
        width: u32,
        height: u32,
        camera_angle_x: f64,
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
    ) -> Result<Self> {
        Self::from_fov(width, height, camera_angle_x, look_at_matrix(eye, target, up)?)
    }

    pub fn origin(&self) -> [f64; 3] {
        let c = &self.cam_to_world;
        [c[(0, 3)], c[(1, 3)], c[(2, 3)]]
    }

    /// Ray through the center of pixel `(px, py)`; row 0 is the top row.
    pub fn ray(&self, px: u32, py: u32) -> Ray {
        let x = (px as f64 + 0.5 - 0.5 * self.width as f64) / self.focal;
        let y = -(py as f64 + 0.5 - 0.5 * self.height as f64) / self.focal;
        let c = &self.cam_to_world;
        let d = [
            c[(0, 0)] * x + c[(0, 1)] * y - c[(0, 2)],
            c[(1, 0)] * x + c[(1, 1)] * y - c[(1, 2)],
            c[(2, 0)] * x + c[(2, 1)] * y - c[(2, 2)],
        ];
        let n = norm(d);
        Ray {
            origin: self.origin(),
            dir: [d[0] / n, d[1] / n, d[2] / n],
        }
    }

    pub fn generate_rays(&self, pixels: &[(u32, u32)]) -> Result<Vec<Ray>> {
        pixels
            .iter()
            .map(|&(px, py)| {
                if px >= self.width || py >= self.height {
                    Err(Error::InvalidArgument(format!(
                        "pixel ({px}, {py}) outside {}x{} image",
                        self.width, self.height
                    )))
                } else {
                    Ok(self.ray(px, py))
                }
            })
            .collect()
    }

    /// Returns a copy transformed by a world-space rigid motion.
    pub fn transformed(&self, world_from_world: &Matrix4<f64>) -> Result<Self> {
        Self::new(self.width, self.height, self.focal, world_from_world * self.cam_to_world)
    }
}

pub fn look_at_matrix(eye: [f64; 3], target: [f64; 3], up: [f64; 3]) -> Result<Matrix4<f64>> {
    let eye_v = Vector3::from(eye);
    let back = eye_v - Vector3::from(target);
    if back.norm() < 1e-12 {
        return Err(Error::InvalidArgument("eye and target coincide".into()));
    }
    let z = back.normalize();
    let x = Vector3::from(up).cross(&z);
    if x.norm() < 1e-9 {
        return Err(Error::InvalidArgument("up vector parallel to view direction".into()));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let mut m = Matrix4::identity();
    for r in 0..3 {
        m[(r, 0)] = x[r];
        m[(r, 1)] = y[r];
        m[(r, 2)] = z[r];
        m[(r, 3)] = eye_v[r];
    }
    Ok(m)
}

/// Slab intersection clipped to `t ≥ 0`; `None` when the ray misses.
pub fn ray_aabb(ray: &Ray, aabb: &Aabb) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        let o = ray.origin[a];
        let d = ray.dir[a];
        if d.abs() < 1e-300 {
            if o < aabb.min[a] || o > aabb.max[a] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d;
        let mut ta = (aabb.min[a] - o) * inv;
        let mut tb = (aabb.max[a] - o) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    (t1 > t0).then_some((t0, t1))
}
