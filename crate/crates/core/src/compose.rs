//! Several models placed in one scene and rendered together.
//!
//! Every object is queried through its own warped copy of each ray. At a
//! sample the densities of all objects that cover it are summed and their
//! colors blended with a softmax over those densities.

use std::sync::Arc;

use nalgebra::{Matrix4, UnitQuaternion, Vector3};

use crate::compress::truncate_color;
use crate::error::{Error, Result};
use crate::field::{Aabb, RankCount};
use crate::io::model_file::serialized_size;
use crate::model::FieldPair;
use crate::render::{ray_aabb, ModelShader, Ray, RayResult, RenderOptions, Renderable, SampleGrid};

/// Object-to-world placement `p_world = R · diag(s) · p_object + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineTransform {
    pub translation: [f64; 3],
    rotation: UnitQuaternion<f64>,
    scale: [f64; 3],
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: UnitQuaternion::identity(),
            scale: [1.0; 3],
        }
    }

    /// `rotation` is `[w, x, y, z]` and must have unit norm within 1e-6;
    /// every scale must be positive.
    pub fn new(translation: [f64; 3], rotation: [f64; 4], scale: [f64; 3]) -> Result<Self> {
        let [w, x, y, z] = rotation;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        if !((n - 1.0).abs() <= 1e-6) {
            return Err(Error::InvalidArgument(format!("rotation quaternion has norm {n}, expected 1")));
        }
        if scale.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("scale {scale:?} must be positive")));
        }
        if translation.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("translation must be finite".into()));
        }
        let q = nalgebra::Quaternion::new(w, x, y, z);
        Ok(Self {
            translation,
            rotation: UnitQuaternion::new_normalize(q),
            scale,
        })
    }

    pub fn translation(t: [f64; 3]) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rotation by `angle` radians about `axis`, then translation.
    pub fn rigid(axis: [f64; 3], angle: f64, t: [f64; 3]) -> Result<Self> {
        let axis = nalgebra::Unit::try_new(Vector3::from(axis), 1e-12).ok_or(Error::ZeroDirection)?;
        Ok(Self {
            translation: t,
            rotation: UnitQuaternion::from_axis_angle(&axis, angle),
            scale: [1.0; 3],
        })
    }

    /// `[w, x, y, z]`.
    pub fn rotation(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn scale(&self) -> [f64; 3] {
        self.scale
    }

    pub fn is_rigid(&self) -> bool {
        self.scale == [1.0; 3]
    }

    pub fn object_to_world(&self) -> Matrix4<f64> {
        let r = self.rotation.to_rotation_matrix().to_homogeneous();
        let s = Matrix4::new_nonuniform_scaling(&Vector3::from(self.scale));
        Matrix4::new_translation(&Vector3::from(self.translation)) * r * s
    }

    pub fn world_to_object(&self) -> Matrix4<f64> {
        let inv_s = Matrix4::new_nonuniform_scaling(&Vector3::from(self.scale.map(|s| 1.0 / s)));
        let r_inv = self.rotation.inverse().to_rotation_matrix().to_homogeneous();
        inv_s * r_inv * Matrix4::new_translation(&Vector3::from(self.translation.map(|v| -v)))
    }

    pub fn point_to_object(&self, p: [f64; 3]) -> [f64; 3] {
        let v = Vector3::from(p) - Vector3::from(self.translation);
        let v = self.rotation.inverse_transform_vector(&v);
        [v.x / self.scale[0], v.y / self.scale[1], v.z / self.scale[2]]
    }

    pub fn point_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let v = Vector3::new(p[0] * self.scale[0], p[1] * self.scale[1], p[2] * self.scale[2]);
        let v = self.rotation.transform_vector(&v) + Vector3::from(self.translation);
        [v.x, v.y, v.z]
    }

    /// World box enclosing the transformed `aabb`.
    pub fn world_aabb(&self, aabb: &Aabb) -> Aabb {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for c in 0..8 {
            let corner: [f64; 3] = std::array::from_fn(|a| if c >> a & 1 == 0 { aabb.min[a] } else { aabb.max[a] });
            let p = self.point_to_world(corner);
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        Aabb { min: lo, max: hi }
    }
}

/// A ray expressed in an object's frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpedRay {
    /// Object-space ray with unit direction; object distance = world
    /// distance × `length_scale`.
    pub ray: Ray,
    pub length_scale: f64,
    /// Rotation-only viewing direction used for shading.
    pub view_dir: [f64; 3],
}

pub fn warp_ray(ray: &Ray, tf: &AffineTransform) -> WarpedRay {
    let origin = tf.point_to_object(ray.origin);
    let rotated = tf.rotation.inverse_transform_vector(&Vector3::from(ray.dir));
    let d = [rotated.x / tf.scale[0], rotated.y / tf.scale[1], rotated.z / tf.scale[2]];
    let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let vn = rotated.norm();
    WarpedRay {
        ray: Ray {
            origin,
            dir: d.map(|v| v / len),
        },
        length_scale: len,
        view_dir: [rotated.x / vn, rotated.y / vn, rotated.z / vn],
    }
}

/// Blends the samples of several objects at one point: returns the opacity
/// of the summed density and the softmax-weighted color.
pub fn composite_sample(sigmas: &[f64], colors: &[[f64; 3]], delta: f64) -> (f64, [f64; 3]) {
    let total: f64 = sigmas.iter().sum();
    let alpha = 1.0 - (-total * delta).exp();
    let weights = softmax(sigmas);
    let mut rgb = [0.0; 3];
    for (w, c) in weights.iter().zip(colors) {
        for k in 0..3 {
            rgb[k] += w * c[k];
        }
    }
    (alpha, rgb)
}

/// Max-subtracted softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// One placed model.
#[derive(Clone, Debug)]
pub struct ObjectInstance {
    pub id: u64,
    /// The model as loaded, before any level-of-detail truncation.
    pub source: Arc<FieldPair>,
    pub transform: AffineTransform,
    pub lod: Option<RankCount>,
    /// The model actually rendered.
    pub model: Arc<FieldPair>,
}

impl ObjectInstance {
    /// Density and color component counts of the rendered model.
    pub fn ranks(&self) -> (RankCount, RankCount) {
        (self.model.density.layout().total(), self.model.color.layout().total())
    }
}

/// An ordered list of placed models.
#[derive(Clone, Debug)]
pub struct Scene {
    pub background: [f64; 3],
    instances: Vec<ObjectInstance>,
    next_id: u64,
}

impl Default for Scene {
    fn default() -> Self {
        Self::new([1.0; 3])
    }
}

impl Scene {
    pub fn new(background: [f64; 3]) -> Self {
        Self {
            background,
            instances: Vec::new(),
            next_id: 0,
        }
    }

    /// Places a model; `lod` truncates its color components with
    /// sort-and-truncate. Returns the instance id.
    pub fn add_instance(&mut self, model: Arc<FieldPair>, transform: AffineTransform, lod: Option<RankCount>) -> Result<u64> {
        let rendered = match lod {
            Some(t) if t != model.color.layout().total() => Arc::new(truncate_color(&model, t)?),
            _ => model.clone(),
        };
        let id = self.next_id;
        self.next_id += 1;
        self.instances.push(ObjectInstance {
            id,
            source: model,
            transform,
            lod,
            model: rendered,
        });
        Ok(id)
    }

    pub fn remove_instance(&mut self, id: u64) -> Result<ObjectInstance> {
        let i = self.instances.iter().position(|o| o.id == id).ok_or(Error::UnknownInstance(id))?;
        Ok(self.instances.remove(i))
    }

    /// Changes the level of detail of one instance.
    pub fn set_lod(&mut self, id: u64, lod: Option<RankCount>) -> Result<()> {
        let inst = self.instances.iter_mut().find(|o| o.id == id).ok_or(Error::UnknownInstance(id))?;
        inst.model = match lod {
            Some(t) if t != inst.source.color.layout().total() => Arc::new(truncate_color(&inst.source, t)?),
            _ => inst.source.clone(),
        };
        inst.lod = lod;
        Ok(())
    }

    pub fn instances(&self) -> &[ObjectInstance] {
        &self.instances
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Summed density and color component counts.
    pub fn total_ranks(&self) -> (RankCount, RankCount) {
        self.instances.iter().fold(Default::default(), |(d, c), o| {
            let (od, oc) = o.ranks();
            (
                RankCount::new(d.vec + od.vec, d.mat + od.mat),
                RankCount::new(c.vec + oc.vec, c.mat + oc.mat),
            )
        })
    }

    /// Union of the transformed object boxes.
    pub fn world_aabb(&self) -> Option<Aabb> {
        self.instances
            .iter()
            .map(|o| o.transform.world_aabb(&o.model.aabb))
            .reduce(|a, b| a.union(&b))
    }

    /// Sum of the model file sizes of every rendered model.
    pub fn serialized_bytes(&self) -> u64 {
        self.instances.iter().map(|o| serialized_size(&o.model)).sum()
    }

    /// `opts` with the scene background.
    pub fn options(&self, opts: &RenderOptions) -> RenderOptions {
        RenderOptions {
            background: self.background,
            ..*opts
        }
    }
}

struct Hit<'a> {
    shader: ModelShader<'a, f32>,
    warped: WarpedRay,
    /// World-space interval inside the object box.
    t0: f64,
    t1: f64,
}

/// Marches one world ray through every object of a scene on a shared
/// sample grid. Uses `opts.background`.
pub fn march_composed(scene: &Scene, ray: &Ray, opts: &RenderOptions) -> RayResult {
    let mut hits: Vec<Hit<'_>> = Vec::new();
    let mut step = f64::INFINITY;
    for inst in &scene.instances {
        let warped = warp_ray(ray, &inst.transform);
        let Some((a, b)) = ray_aabb(&warped.ray, &inst.model.aabb) else {
            continue;
        };
        let s = warped.length_scale;
        step = step.min(opts.step_for(&inst.model.aabb) / s);
        let mut shader = ModelShader::new(&inst.model);
        shader.set_direction(warped.view_dir);
        hits.push(Hit {
            shader,
            warped,
            t0: a / s,
            t1: b / s,
        });
    }
    if hits.is_empty() {
        return RayResult::background(opts.background);
    }
    let t_near = hits.iter().map(|h| h.t0).fold(f64::INFINITY, f64::min);
    let t_far = hits.iter().map(|h| h.t1).fold(f64::NEG_INFINITY, f64::max);
    let grid = SampleGrid::new(t_near, t_far, step, opts.max_samples);
    let mut active = Vec::with_capacity(hits.len());
    let mut sigmas = Vec::with_capacity(hits.len());
    let mut samples = Vec::with_capacity(hits.len());
    let mut trans = 1.0f64;
    let mut rgb = [0.0f64; 3];
    for i in 0..grid.count {
        let (t, dt) = grid.sample(i);
        active.clear();
        sigmas.clear();
        samples.clear();
        for (n, h) in hits.iter_mut().enumerate() {
            if t < h.t0 || t >= h.t1 {
                continue;
            }
            let p = h.warped.ray.at(t * h.warped.length_scale);
            if let Some(at) = h.shader.density_world(p, opts.use_occupancy) {
                active.push(n);
                sigmas.push(at.2);
                samples.push(at);
            }
        }
        let total: f64 = sigmas.iter().sum();
        if total <= 0.0 {
            continue;
        }
        let alpha = 1.0 - (-total * dt).exp();
        let w = trans * alpha;
        if w >= opts.min_color_weight {
            if active.len() == 1 {
                let c = hits[active[0]].shader.color_here(&samples[0]);
                for k in 0..3 {
                    rgb[k] += w * c[k];
                }
            } else {
                let weights = softmax(&sigmas);
                for ((&n, at), sw) in active.iter().zip(&samples).zip(weights) {
                    let c = hits[n].shader.color_here(at);
                    for k in 0..3 {
                        rgb[k] += w * sw * c[k];
                    }
                }
            }
        }
        trans *= 1.0 - alpha;
        if trans < opts.termination {
            break;
        }
    }
    for k in 0..3 {
        rgb[k] += trans * opts.background[k];
    }
    RayResult {
        rgb,
        alpha: 1.0 - trans,
    }
}

impl Renderable for Scene {
    fn trace(&self, ray: &Ray, opts: &RenderOptions) -> RayResult {
        march_composed(self, ray, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::RankLayout;
    use crate::render::{march_ray, Camera};
    use crate::shading::ShadingConfig;
    use rand::SeedableRng;

    fn model(seed: u64) -> FieldPair {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut m = FieldPair::init_random(
            Aabb::cube(0.5),
            [6, 6, 6],
            RankLayout::single(2, 1).unwrap(),
            RankLayout::single(2, 2).unwrap(),
            ShadingConfig::new(2, 0.0).unwrap(),
            &mut rng,
        )
        .unwrap();
        m.density.randomize(&mut rng, 1.0, 2.0);
        m
    }

    fn close(a: [f64; 3], b: [f64; 3], tol: f64) -> bool {
        (0..3).all(|k| (a[k] - b[k]).abs() <= tol)
    }

    #[test]
    fn identity_warp_is_noop() {
        let r = Ray::new([1.0, 2.0, 3.0], [0.2, -0.3, 1.0]).unwrap();
        let w = warp_ray(&r, &AffineTransform::identity());
        assert_eq!(w.ray, r);
        assert_eq!(w.length_scale, 1.0);
    }

    #[test]
    fn translation_shifts_origin() {
        let r = Ray::new([1.0, 2.0, 3.0], [0.0, 0.0, 1.0]).unwrap();
        let w = warp_ray(&r, &AffineTransform::translation([0.5, -1.0, 2.0]));
        assert!(close(w.ray.origin, [0.5, 3.0, 1.0], 1e-15));
        assert_eq!(w.ray.dir, r.dir);
    }

    #[test]
    fn quarter_turn_about_z() {
        let tf = AffineTransform::rigid([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2, [0.0; 3]).unwrap();
        let w = warp_ray(&Ray::new([0.0; 3], [1.0, 0.0, 0.0]).unwrap(), &tf);
        assert!(close(w.ray.dir, [0.0, -1.0, 0.0], 1e-12), "{:?}", w.ray.dir);
        let m = tf.object_to_world() * tf.world_to_object();
        assert!((m - Matrix4::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn scaled_warp_reports_length() {
        let tf = AffineTransform::new([0.0; 3], [1.0, 0.0, 0.0, 0.0], [2.0, 1.0, 1.0]).unwrap();
        let w = warp_ray(&Ray::new([0.0; 3], [1.0, 0.0, 0.0]).unwrap(), &tf);
        assert!((w.length_scale - 0.5).abs() < 1e-15);
        assert_eq!(w.view_dir, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn bad_transforms_rejected() {
        assert!(AffineTransform::new([0.0; 3], [1.0, 1.0, 0.0, 0.0], [1.0; 3]).is_err());
        assert!(AffineTransform::new([0.0; 3], [1.0, 0.0, 0.0, 0.0], [1.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn composite_examples() {
        let (a, c) = composite_sample(&[2.0], &[[0.1, 0.2, 0.3]], 0.1);
        assert!((a - (1.0 - (-0.2f64).exp())).abs() < 1e-15);
        assert_eq!(c, [0.1, 0.2, 0.3]);
        let (a, c) = composite_sample(&[1.5, 1.5], &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], 0.2);
        assert!((a - (1.0 - (-0.6f64).exp())).abs() < 1e-15);
        assert!(close(c, [0.5, 0.5, 0.0], 1e-15));
        let w = softmax(&[0.0, 9f64.ln()]);
        assert!((w[0] - 0.1).abs() < 1e-15 && (w[1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn single_identity_object_matches_solo() {
        let m = Arc::new(model(1));
        let mut scene = Scene::default();
        scene.add_instance(m.clone(), AffineTransform::identity(), None).unwrap();
        let cam = Camera::look_at(12, 10, 0.8, [1.5, -1.2, 0.9], [0.0; 3], [0.0, 0.0, 1.0]).unwrap();
        let opts = RenderOptions::default();
        for py in 0..10 {
            for px in 0..12 {
                let r = cam.ray(px, py);
                let (a, b) = (march_composed(&scene, &r, &opts), march_ray(&*m, &r, &opts));
                assert!(close(a.rgb, b.rgb, 1e-12) && (a.alpha - b.alpha).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn remove_restores_and_unknown_id_errors() {
        let mut scene = Scene::default();
        let a = scene.add_instance(Arc::new(model(1)), AffineTransform::identity(), None).unwrap();
        let r = Ray::new([0.1, -3.0, 0.05], [0.0, 1.0, 0.0]).unwrap();
        let before = march_composed(&scene, &r, &RenderOptions::default());
        let b = scene
            .add_instance(Arc::new(model(2)), AffineTransform::translation([0.2, 0.0, 0.0]), None)
            .unwrap();
        assert_ne!(march_composed(&scene, &r, &RenderOptions::default()), before);
        scene.remove_instance(b).unwrap();
        assert_eq!(march_composed(&scene, &r, &RenderOptions::default()), before);
        assert!(matches!(scene.remove_instance(b), Err(Error::UnknownInstance(_))));
        assert_eq!(scene.total_ranks().1, RankCount::new(2, 2));
        let _ = a;
    }
}
