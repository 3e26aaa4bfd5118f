//! Central finite-difference check of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::groups::{backward, forward_groups, rank_residual_loss, GradientRouting, LossTerms};
use super::{add_l1, model_tensors, model_tensors_mut, TENSOR_NAMES};
use crate::error::Result;
use crate::field::{Aabb, RankCount, RankLayout};
use crate::model::FieldPair;
use crate::render::{Ray, RenderOptions};
use crate::shading::ShadingConfig;

/// Gradients smaller than this are compared in absolute terms.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSetup {
    pub resolution: usize,
    pub density_layout: RankLayout,
    pub color_layout: RankLayout,
    pub sh_degree: usize,
    pub rays: usize,
    pub routing: GradientRouting,
    pub l1: f64,
    pub step: f64,
    pub samples_per_diagonal: f64,
    pub seed: u64,
}

impl GradcheckSetup {
    /// 8³ hybrid model with two rank groups in both fields.
    pub fn desk() -> Self {
        let l = |g: &[(usize, usize)]| RankLayout::new(g.iter().map(|&(v, m)| RankCount::new(v, m)).collect()).unwrap();
        Self {
            resolution: 8,
            density_layout: l(&[(2, 1), (1, 1)]),
            color_layout: l(&[(2, 1), (1, 2)]),
            sh_degree: 2,
            rays: 16,
            routing: GradientRouting::Cumulative,
            l1: 1e-2,
            step: 1e-4,
            samples_per_diagonal: 96.0,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: (String, usize),
    pub per_tensor: Vec<(String, f64)>,
}

struct Problem {
    model: FieldPair<f64>,
    rays: Vec<Ray>,
    gt: Vec<[f64; 3]>,
    terms: LossTerms,
    opts: RenderOptions,
    l1: f64,
}

impl Problem {
    fn loss(&self, model: &FieldPair<f64>, active: &[bool]) -> f64 {
        let fwd = forward_groups(model, &self.rays, &self.opts);
        let preds: Vec<Vec<[f64; 3]>> = (0..fwd.groups).map(|m| fwd.predictions(m)).collect();
        let d = &model.density;
        let l1: f64 = (0..3)
            .flat_map(|a| d.vec_factor(a).iter().chain(d.mat_factor(a)))
            .map(|v| v.abs())
            .sum();
        rank_residual_loss(&preds, &self.gt, Some(active)) + self.l1 * l1
    }
}

fn build(setup: &GradcheckSetup) -> Result<Problem> {
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let shading = ShadingConfig::new(setup.sh_degree, 0.0)?;
    let aabb = Aabb::cube(1.0);
    let mut model = FieldPair::<f64>::zeros(
        aabb,
        [setup.resolution; 3],
        setup.density_layout.clone(),
        setup.color_layout.clone(),
        shading,
    )?;
    model.density.randomize(&mut rng, 1.0, 1.0);
    model.color.randomize(&mut rng, 1.0, 1.0);
    // keep every entry away from the L1 kink at zero
    for t in model_tensors_mut(&mut model) {
        for v in t.iter_mut() {
            if v.abs() < 1e-2 {
                *v = if *v < 0.0 { -0.5 } else { 0.5 };
            }
        }
    }
    let rays = (0..setup.rays)
        .map(|_| {
            let origin: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            let origin = {
                let n = origin.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
                origin.map(|v| 3.0 * v / n)
            };
            let target: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.6..0.6));
            Ray::new(origin, std::array::from_fn(|a| target[a] - origin[a]))
        })
        .collect::<Result<Vec<_>>>()?;
    let gt = (0..setup.rays).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
    let m = super::groups::prediction_count(&model);
    let opts = RenderOptions {
        samples_per_diagonal: setup.samples_per_diagonal,
        termination: 0.0,
        min_color_weight: 0.0,
        use_occupancy: false,
        ..RenderOptions::default()
    };
    Ok(Problem {
        model,
        rays,
        gt,
        terms: LossTerms::all(m, setup.routing),
        opts,
        l1: setup.l1,
    })
}

/// Compares every analytic gradient entry with a central difference of
/// step `setup.step` on the rank-residual plus L1 loss, in 64-bit.
///
/// Detached routing is checked against the loss whose term `m` sees the
/// earlier groups as constants: its gradient w.r.t. group `g` is the
/// derivative of term `g` alone.
pub fn gradcheck(setup: &GradcheckSetup) -> Result<GradcheckReport> {
    let p = build(setup)?;
    let fwd = forward_groups(&p.model, &p.rays, &p.opts);
    let mut grad = backward(&p.model, &fwd, &p.gt, &p.terms, &p.opts)?;
    add_l1(&p.model, p.l1, None, &mut grad);
    let analytic: Vec<Vec<f64>> = grad.tensors().iter().map(|t| t.to_vec()).collect();

    let shapes: Vec<usize> = model_tensors(&p.model).iter().map(|t| t.len()).collect();
    let entries: Vec<(usize, usize)> = shapes
        .iter()
        .enumerate()
        .flat_map(|(t, &n)| (0..n).map(move |i| (t, i)))
        .collect();
    let h = setup.step;
    let numeric: Vec<f64> = entries
        .par_iter()
        .map(|&(t, i)| fd_entry(&p, setup.routing, t, i, h))
        .collect();

    let mut per_tensor = vec![0.0f64; shapes.len()];
    let mut worst = (0.0, 0, 0);
    for (&(t, i), &n) in entries.iter().zip(&numeric) {
        let a = analytic[t][i];
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(RELATIVE_ERROR_FLOOR);
        per_tensor[t] = per_tensor[t].max(rel);
        if rel > worst.0 {
            worst = (rel, t, i);
        }
    }
    Ok(GradcheckReport {
        checked: entries.len(),
        max_rel_error: worst.0,
        worst: (TENSOR_NAMES[worst.1].to_string(), worst.2),
        per_tensor: TENSOR_NAMES
            .iter()
            .zip(per_tensor)
            .map(|(n, e)| (n.to_string(), e))
            .collect(),
    })
}

fn fd_entry(p: &Problem, routing: GradientRouting, tensor: usize, index: usize, h: f64) -> f64 {
    let mut model = p.model.clone();
    let orig = model_tensors(&model)[tensor][index];
    let active = match routing {
        GradientRouting::Cumulative => p.terms.active.clone(),
        GradientRouting::OwnGroup => own_term(p, tensor, index),
    };
    let eval = |x: f64, model: &mut FieldPair<f64>| {
        model_tensors_mut(model)[tensor][index] = x;
        p.loss(model, &active)
    };
    let plus = eval(orig + h, &mut model);
    let minus = eval(orig - h, &mut model);
    (plus - minus) / (2.0 * h)
}

/// Under detached routing a component of group `g` only receives the
/// gradient of term `g` (plus L1 for density factors).
fn own_term(p: &Problem, tensor: usize, index: usize) -> Vec<bool> {
    let field = if tensor < 7 { &p.model.density } else { &p.model.color };
    let layout = field.layout();
    let (vg, mg) = (layout.vec_groups(), layout.mat_groups());
    let group = match tensor % 7 {
        0 => {
            let r = index % field.rank();
            if r < field.n_vec() {
                vg[r]
            } else {
                mg[r - field.n_vec()]
            }
        }
        1..=3 => vg[index % field.n_vec()],
        _ => mg[index % field.n_mat()],
    };
    let mut active = vec![false; p.terms.active.len()];
    active[group] = true;
    active
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(density: &[(usize, usize)], color: &[(usize, usize)], routing: GradientRouting) -> GradcheckSetup {
        let l = |g: &[(usize, usize)]| RankLayout::new(g.iter().map(|&(v, m)| RankCount::new(v, m)).collect()).unwrap();
        GradcheckSetup {
            resolution: 4,
            density_layout: l(density),
            color_layout: l(color),
            sh_degree: 1,
            rays: 6,
            routing,
            samples_per_diagonal: 48.0,
            ..GradcheckSetup::desk()
        }
    }

    #[test]
    fn vec_only_layout() {
        let r = gradcheck(&small(&[(2, 0)], &[(2, 0), (1, 0)], GradientRouting::Cumulative)).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn mat_only_layout_detached() {
        let r = gradcheck(&small(&[(0, 2)], &[(0, 1), (0, 2)], GradientRouting::OwnGroup)).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn hybrid_with_more_density_groups() {
        let r = gradcheck(&small(&[(1, 1), (1, 0), (0, 1)], &[(1, 1)], GradientRouting::Cumulative)).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
