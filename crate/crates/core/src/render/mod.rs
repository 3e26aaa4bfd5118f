//! Ray generation, occupancy-accelerated ray marching and compositing.
//!
//! Samples sit at `t_i = t_near + i·δ` with `δ_i = t_{i+1} - t_i` (the last
//! interval is clipped at `t_far`), `α_i = 1 - exp(-σ_i δ_i)` and the pixel
//! is `Σ T_i α_i c_i + T_final · background`.

mod camera;
mod image;
mod occupancy;

use rayon::prelude::*;

pub use camera::{look_at_matrix, ray_aabb, Camera, Ray};
pub use image::{psnr, psnr_from_mse, Image, PSNR_CAP_DB};
pub use occupancy::{
    build_occupancy, shrink_aabb, OccupancyGrid, DEFAULT_OCCUPANCY_DILATION,
    DEFAULT_OCCUPANCY_RESOLUTION, DEFAULT_OCCUPANCY_THRESHOLD,
};

use crate::field::{Aabb, FactorSamples, Located, RankCount};
use crate::model::FieldPair;
use crate::real::Real;
use crate::shading::{sh_basis_into, sigmoid, softplus};

/// Marching parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    /// Samples along the model box diagonal; sets the step length.
    pub samples_per_diagonal: f64,
    pub background: [f64; 3],
    /// Marching stops once transmittance drops below this.
    pub termination: f64,
    pub max_samples: usize,
    pub use_occupancy: bool,
    /// Color is only evaluated where the compositing weight `T·α` reaches
    /// this value; below it the sample contributes no color.
    pub min_color_weight: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            samples_per_diagonal: 512.0,
            background: [1.0; 3],
            termination: 1e-4,
            max_samples: 4096,
            use_occupancy: true,
            min_color_weight: 1e-4,
        }
    }
}

impl RenderOptions {
    pub fn step_for(&self, aabb: &Aabb) -> f64 {
        aabb.diagonal() / self.samples_per_diagonal
    }
}

/// Uniform samples over `[t_near, t_far)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleGrid {
    pub t_near: f64,
    pub t_far: f64,
    pub step: f64,
    pub count: usize,
}

impl SampleGrid {
    pub fn new(t_near: f64, t_far: f64, step: f64, max_samples: usize) -> Self {
        let count = (((t_far - t_near) / step).ceil().max(0.0) as usize).min(max_samples);
        Self {
            t_near,
            t_far,
            step,
            count,
        }
    }

    /// Position and interval length of sample `i`.
    #[inline]
    pub fn sample(&self, i: usize) -> (f64, f64) {
        let t = self.t_near + i as f64 * self.step;
        (t, self.step.min(self.t_far - t))
    }
}

/// Composited color and opacity of one ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayResult {
    pub rgb: [f64; 3],
    pub alpha: f64,
}

impl RayResult {
    pub fn background(bg: [f64; 3]) -> Self {
        Self { rgb: bg, alpha: 0.0 }
    }
}

/// Anything that can be traced ray by ray.
pub trait Renderable: Sync {
    fn trace(&self, ray: &Ray, opts: &RenderOptions) -> RayResult;
}

/// Per-ray evaluation state for one model: caches the SH basis folded into
/// the color rank weights so each sample costs `3·R` multiply-adds.
pub(crate) struct ModelShader<'a, T: Real> {
    pub model: &'a FieldPair<T>,
    pub basis: Vec<f64>,
    /// `3 × R_color`, row `k` is `Σ_j Y_j S[k·B + j, ·]`.
    pub folded: Vec<T>,
    pub dsamples: FactorSamples<T>,
    pub dproducts: Vec<T>,
    pub csamples: FactorSamples<T>,
    pub cproducts: Vec<T>,
    shift: f64,
    same_grid: bool,
}

impl<'a, T: Real> ModelShader<'a, T> {
    pub fn new(model: &'a FieldPair<T>) -> Self {
        Self {
            model,
            basis: vec![0.0; model.shading.basis_len()],
            folded: vec![T::zero(); 3 * model.color.rank()],
            dsamples: FactorSamples::for_layout(model.density.layout()),
            dproducts: vec![T::zero(); model.density.rank()],
            csamples: FactorSamples::for_layout(model.color.layout()),
            cproducts: vec![T::zero(); model.color.rank()],
            shift: model.shading.density_shift,
            same_grid: model.density.resolution() == model.color.resolution(),
        }
    }

    /// Sets the (unit, model-space) viewing direction.
    pub fn set_direction(&mut self, dir: [f64; 3]) {
        sh_basis_into(dir, self.model.shading.sh_degree, &mut self.basis);
        let color = &self.model.color;
        let r = color.rank();
        let b = self.basis.len();
        let w = color.weights();
        for k in 0..3 {
            let row = &mut self.folded[k * r..(k + 1) * r];
            row.iter_mut().for_each(|v| *v = T::zero());
            for j in 0..b {
                let y = T::from_f64(self.basis[j]);
                let src = &w[(k * b + j) * r..(k * b + j + 1) * r];
                for (dst, &s) in row.iter_mut().zip(src) {
                    *dst += y * s;
                }
            }
        }
    }

    /// Raw density feature; fills `dproducts`.
    #[inline]
    pub fn raw_density(&mut self, loc: &Located<T>) -> T {
        let d = &self.model.density;
        d.sample_factors(loc, &mut self.dsamples);
        d.products_from_samples(&self.dsamples, &mut self.dproducts);
        d.channel_from_products(0, &self.dproducts, d.layout().total())
    }

    #[inline]
    pub fn density_at(&mut self, u: [T; 3]) -> (Located<T>, f64) {
        let loc = self.model.density.locate(u);
        let raw = self.raw_density(&loc);
        (loc, softplus(raw.to_f64() + self.shift))
    }

    /// Locates `u` on the color grid, reusing the density stencil when the
    /// grids coincide.
    #[inline]
    pub fn color_loc(&self, dloc: &Located<T>, u: [T; 3]) -> Located<T> {
        if self.same_grid {
            *dloc
        } else {
            self.model.color.locate(u)
        }
    }

    /// Fills `cproducts` at `loc`.
    #[inline]
    pub fn color_products(&mut self, loc: &Located<T>) {
        let c = &self.model.color;
        c.sample_factors(loc, &mut self.csamples);
        c.products_from_samples(&self.csamples, &mut self.cproducts);
    }

    /// Pre-sigmoid color logits restricted to a rank prefix.
    #[inline]
    pub fn color_logits(&self, keep: RankCount) -> [T; 3] {
        let c = &self.model.color;
        let (r, nv) = (c.rank(), c.n_vec());
        std::array::from_fn(|k| {
            let row = &self.folded[k * r..(k + 1) * r];
            let mut acc = T::zero();
            for i in 0..keep.vec {
                acc += row[i] * self.cproducts[i];
            }
            for i in 0..keep.mat {
                acc += row[nv + i] * self.cproducts[nv + i];
            }
            acc
        })
    }

    #[inline]
    pub fn color_at(&mut self, dloc: &Located<T>, u: [T; 3]) -> [f64; 3] {
        let loc = self.color_loc(dloc, u);
        self.color_products(&loc);
        let z = self.color_logits(self.model.color.layout().total());
        [sigmoid(z[0].to_f64()), sigmoid(z[1].to_f64()), sigmoid(z[2].to_f64())]
    }

    /// Density at a world-space point inside the model box, or `None` if its
    /// occupancy cell is empty. Follow with [`Self::color_here`].
    #[inline]
    pub fn density_world(&mut self, p: [f64; 3], use_occupancy: bool) -> Option<(Located<T>, [T; 3], f64)> {
        let uf = self.model.aabb.normalize(p);
        if use_occupancy {
            if let Some(g) = &self.model.occupancy {
                if !g.is_occupied(uf) {
                    return None;
                }
            }
        }
        let u = std::array::from_fn(|a| T::from_f64(uf[a].clamp(0.0, 1.0)));
        let (loc, sigma) = self.density_at(u);
        Some((loc, u, sigma))
    }

    #[inline]
    pub fn color_here(&mut self, at: &(Located<T>, [T; 3], f64)) -> [f64; 3] {
        self.color_at(&at.0, at.1)
    }
}

/// Marches one ray through a single model.
pub fn march_ray<T: Real>(model: &FieldPair<T>, ray: &Ray, opts: &RenderOptions) -> RayResult {
    let mut shader = ModelShader::new(model);
    march_with(&mut shader, ray, opts)
}

pub(crate) fn march_with<T: Real>(shader: &mut ModelShader<'_, T>, ray: &Ray, opts: &RenderOptions) -> RayResult {
    let model = shader.model;
    let Some((t0, t1)) = ray_aabb(ray, &model.aabb) else {
        return RayResult::background(opts.background);
    };
    shader.set_direction(ray.dir);
    let grid = SampleGrid::new(t0, t1, opts.step_for(&model.aabb), opts.max_samples);
    let mut trans = 1.0f64;
    let mut rgb = [0.0f64; 3];
    for i in 0..grid.count {
        let (t, dt) = grid.sample(i);
        let Some(at) = shader.density_world(ray.at(t), opts.use_occupancy) else {
            continue;
        };
        let sigma = at.2;
        if sigma <= 0.0 {
            continue;
        }
        let alpha = 1.0 - (-sigma * dt).exp();
        let w = trans * alpha;
        if w >= opts.min_color_weight {
            let c = shader.color_here(&at);
            for k in 0..3 {
                rgb[k] += w * c[k];
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

impl<T: Real> Renderable for FieldPair<T> {
    fn trace(&self, ray: &Ray, opts: &RenderOptions) -> RayResult {
        march_ray(self, ray, opts)
    }
}

/// Renders every pixel of `camera`; rows are processed in parallel and the
/// output does not depend on the worker count.
pub fn render_image<R: Renderable + ?Sized>(scene: &R, camera: &Camera, opts: &RenderOptions) -> Image {
    let (w, h) = (camera.width, camera.height);
    let pixels: Vec<[f32; 3]> = (0..h)
        .into_par_iter()
        .flat_map_iter(|py| {
            (0..w).map(move |px| {
                let r = scene.trace(&camera.ray(px, py), opts);
                [r.rgb[0] as f32, r.rgb[1] as f32, r.rgb[2] as f32]
            })
        })
        .collect();
    Image {
        width: w,
        height: h,
        pixels,
    }
}

/// Accumulated opacity per pixel.
pub fn render_alpha<R: Renderable + ?Sized>(scene: &R, camera: &Camera, opts: &RenderOptions) -> Vec<f32> {
    let (w, h) = (camera.width, camera.height);
    (0..h)
        .into_par_iter()
        .flat_map_iter(|py| (0..w).map(move |px| scene.trace(&camera.ray(px, py), opts).alpha as f32))
        .collect()
}
