//! Rank-prefix forward rendering and its analytic reverse pass.
//!
//! One forward pass produces the `M` predictions `Ĉ_1..Ĉ_M`, where `Ĉ_m`
//! uses only the first `m` rank groups of each field. All predictions share
//! a single sample grid, so `Ĉ_m` equals rendering a copy truncated at the
//! dividing rank `R_m`. A field with fewer groups than `M` uses all of its
//! groups for the later predictions.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::field::{FactorSamples, FieldGrad, Located};
use crate::model::FieldPair;
use crate::real::Real;
use crate::render::{ray_aabb, Ray, RenderOptions, SampleGrid};
use crate::shading::{sigmoid, softplus};

use crate::render::ModelShader;

/// How the loss on `Ĉ_m` reaches the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientRouting {
    /// `Ĉ_m` trains every group `≤ m`.
    Cumulative,
    /// `Ĉ_m` trains only group `m`; earlier groups are treated as constants.
    OwnGroup,
}

/// Which prediction terms enter the loss and how their gradients flow.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTerms {
    pub routing: GradientRouting,
    pub active: Vec<bool>,
}

impl LossTerms {
    pub fn all(groups: usize, routing: GradientRouting) -> Self {
        Self {
            routing,
            active: vec![true; groups],
        }
    }

    /// Only term `stage` is supervised and only its own group trains.
    pub fn single_stage(groups: usize, stage: usize) -> Self {
        let mut active = vec![false; groups];
        active[stage] = true;
        Self {
            routing: GradientRouting::OwnGroup,
            active,
        }
    }
}

/// Gradients for both fields of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrad<T: Real = f32> {
    pub density: FieldGrad<T>,
    pub color: FieldGrad<T>,
}

impl<T: Real> ModelGrad<T> {
    pub fn zeros_like(model: &FieldPair<T>) -> Self {
        Self {
            density: FieldGrad::zeros_like(&model.density),
            color: FieldGrad::zeros_like(&model.color),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        self.density.add_assign(&other.density);
        self.color.add_assign(&other.color);
    }

    pub fn fill_zero(&mut self) {
        self.density.fill_zero();
        self.color.fill_zero();
    }

    /// All 14 tensors: density S, Ux..Uxz, then color S, Ux..Uxz.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.density.tensors().into_iter().chain(self.color.tensors()).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        let ModelGrad { density, color } = self;
        density.tensors_mut().into_iter().chain(color.tensors_mut()).collect()
    }
}

/// Component index ranges of one rank group.
#[derive(Clone, Debug)]
struct GroupSpan {
    vec: Range<usize>,
    mat: Range<usize>,
}

fn spans(layout: &crate::field::RankLayout) -> Vec<GroupSpan> {
    let mut v = 0;
    let mut m = 0;
    layout
        .groups()
        .iter()
        .map(|g| {
            let s = GroupSpan {
                vec: v..v + g.vec,
                mat: m..m + g.mat,
            };
            v += g.vec;
            m += g.mat;
            s
        })
        .collect()
}

/// Number of predictions for a model: the larger group count of its fields.
pub fn prediction_count<T: Real>(model: &FieldPair<T>) -> usize {
    model
        .density
        .layout()
        .num_groups()
        .max(model.color.layout().num_groups())
}

/// Per-ray record of every evaluated sample.
///
/// Transmittance only depends on the density prefix, so opacity data is
/// kept per density group count `Md`; colors are kept per prediction and
/// only for samples where some prediction evaluated color.
#[derive(Clone, Debug, Default)]
pub struct RayTape<T: Real> {
    pub(crate) hit: bool,
    pub(crate) direction: Option<[f64; 3]>,
    dt: Vec<f64>,
    dlocs: Vec<Located<T>>,
    /// `n × Md`
    alpha: Vec<f64>,
    /// `n × Md`, derivative of softplus at the raw density.
    dsoftplus: Vec<f64>,
    /// `n × Rd`
    dproducts: Vec<T>,
    /// Index into the color arrays, `u32::MAX` when no color was evaluated.
    color_slot: Vec<u32>,
    clocs: Vec<Located<T>>,
    /// `slots × M`, zero where masked.
    color: Vec<[f64; 3]>,
    color_on: Vec<bool>,
    /// `slots × Rc`
    cproducts: Vec<T>,
    /// `M` predictions including background.
    pub predictions: Vec<[f64; 3]>,
}

impl<T: Real> RayTape<T> {
    fn clear(&mut self) {
        self.hit = false;
        self.direction = None;
        self.dt.clear();
        self.dlocs.clear();
        self.alpha.clear();
        self.dsoftplus.clear();
        self.dproducts.clear();
        self.color_slot.clear();
        self.clocs.clear();
        self.color.clear();
        self.color_on.clear();
        self.cproducts.clear();
        self.predictions.clear();
    }

    pub fn sample_count(&self) -> usize {
        self.dt.len()
    }
}

/// Reusable per-worker evaluation state.
pub(crate) struct GroupKernel<'a, T: Real> {
    shader: ModelShader<'a, T>,
    opts: RenderOptions,
    m: usize,
    dspans: Vec<GroupSpan>,
    cspans: Vec<GroupSpan>,
    dgroups: usize,
    cgroups: usize,
    shift: f64,
    // scratch
    trans: Vec<f64>,
    weight: Vec<f64>,
    trans_next: Vec<f64>,
    acc: Vec<[f64; 3]>,
    raw_group: Vec<f64>,
    zg: Vec<[f64; 3]>,
    draw: Vec<[f64; 1]>,
    dz: Vec<[f64; 3]>,
    dz_group: Vec<[f64; 3]>,
    dpd: Vec<T>,
    dpc: Vec<T>,
    fold_acc: Vec<f64>,
    dsamples: FactorSamples<T>,
    csamples: FactorSamples<T>,
}

impl<'a, T: Real> GroupKernel<'a, T> {
    pub fn new(model: &'a FieldPair<T>, opts: &RenderOptions) -> Self {
        let m = prediction_count(model);
        let dspans = spans(model.density.layout());
        let cspans = spans(model.color.layout());
        let md = dspans.len();
        Self {
            shader: ModelShader::new(model),
            opts: *opts,
            m,
            dgroups: md,
            cgroups: cspans.len(),
            dspans,
            cspans,
            shift: model.shading.density_shift,
            trans: vec![0.0; md],
            weight: vec![0.0; md],
            trans_next: vec![0.0; md],
            acc: vec![[0.0; 3]; m],
            raw_group: vec![0.0; md],
            zg: vec![[0.0; 3]; m],
            draw: vec![[0.0]; m],
            dz: vec![[0.0; 3]; m],
            dz_group: vec![[0.0; 3]; m],
            dpd: vec![T::zero(); model.density.rank()],
            dpc: vec![T::zero(); model.color.rank()],
            fold_acc: vec![0.0; 3 * model.color.rank()],
            dsamples: FactorSamples::for_layout(model.density.layout()),
            csamples: FactorSamples::for_layout(model.color.layout()),
        }
    }

    pub fn predictions(&self) -> usize {
        self.m
    }

    /// Density prefix used by prediction `m`.
    #[inline]
    fn dm(&self, m: usize) -> usize {
        m.min(self.dgroups - 1)
    }

    /// Renders all `M` predictions of one ray and records the tape. The
    /// sample grid starts `jitter` steps past the box entry.
    pub fn forward(&mut self, ray: &Ray, jitter: f64, tape: &mut RayTape<T>) {
        tape.clear();
        let m_total = self.m;
        let md = self.dgroups;
        let model = self.shader.model;
        let bg = self.opts.background;
        let Some((t0, t1)) = ray_aabb(ray, &model.aabb) else {
            tape.predictions.resize(m_total, bg);
            return;
        };
        tape.hit = true;
        tape.direction = Some(ray.dir);
        self.shader.set_direction(ray.dir);
        let step = self.opts.step_for(&model.aabb);
        let grid = SampleGrid::new(t0 + jitter * step, t1, step, self.opts.max_samples);
        self.trans.iter_mut().for_each(|t| *t = 1.0);
        self.acc.iter_mut().for_each(|a| *a = [0.0; 3]);
        let nvd = model.density.n_vec();
        let nvc = model.color.n_vec();
        let rc = model.color.rank();
        let dweights = model.density.weights();

        for i in 0..grid.count {
            let (t, dt) = grid.sample(i);
            let uf = model.aabb.normalize(ray.at(t));
            if self.opts.use_occupancy {
                if let Some(g) = &model.occupancy {
                    if !g.is_occupied(uf) {
                        continue;
                    }
                }
            }
            let u: [T; 3] = std::array::from_fn(|a| T::from_f64(uf[a].clamp(0.0, 1.0)));
            let dloc = model.density.locate(u);
            let density = &model.density;
            density.sample_factors(&dloc, &mut self.dsamples);
            density.products_from_samples(&self.dsamples, &mut self.shader.dproducts);
            let dprod = &self.shader.dproducts;
            for (g, sp) in self.dspans.iter().enumerate() {
                let mut acc = T::zero();
                for r in sp.vec.clone() {
                    acc += dweights[r] * dprod[r];
                }
                for r in sp.mat.clone() {
                    acc += dweights[nvd + r] * dprod[nvd + r];
                }
                self.raw_group[g] = acc.to_f64();
            }
            let mut raw = 0.0;
            let mut any_on = false;
            for dm in 0..md {
                raw += self.raw_group[dm];
                let x = raw + self.shift;
                let sigma = softplus(x);
                let alpha = -(-sigma * dt).exp_m1();
                let w = self.trans[dm] * alpha;
                self.weight[dm] = w;
                any_on |= sigma > 0.0 && w >= self.opts.min_color_weight;
                tape.alpha.push(alpha);
                tape.dsoftplus.push(sigmoid(x));
            }
            if any_on {
                tape.color_slot.push(tape.clocs.len() as u32);
                let cloc = self.shader.color_loc(&dloc, u);
                self.shader.color_products(&cloc);
                tape.clocs.push(cloc);
                let folded = &self.shader.folded;
                let cprod = &self.shader.cproducts;
                for (g, sp) in self.cspans.iter().enumerate() {
                    self.zg[g] = std::array::from_fn(|k| {
                        let row = &folded[k * rc..(k + 1) * rc];
                        let mut acc = T::zero();
                        for r in sp.vec.clone() {
                            acc += row[r] * cprod[r];
                        }
                        for r in sp.mat.clone() {
                            acc += row[nvc + r] * cprod[nvc + r];
                        }
                        acc.to_f64()
                    });
                }
                tape.cproducts.extend_from_slice(cprod);
                let mut z = [0.0f64; 3];
                for m in 0..m_total {
                    if m < self.cgroups {
                        for k in 0..3 {
                            z[k] += self.zg[m][k];
                        }
                    }
                    let dm = self.dm(m);
                    let w = self.weight[dm];
                    let on = w >= self.opts.min_color_weight && tape.alpha[tape.alpha.len() - md + dm] > 0.0;
                    let c = if on { z.map(sigmoid) } else { [0.0; 3] };
                    for k in 0..3 {
                        self.acc[m][k] += w * c[k];
                    }
                    tape.color.push(c);
                    tape.color_on.push(on);
                }
            } else {
                tape.color_slot.push(u32::MAX);
            }
            let base = tape.alpha.len() - md;
            let mut max_trans = 0.0f64;
            for dm in 0..md {
                self.trans[dm] *= 1.0 - tape.alpha[base + dm];
                max_trans = max_trans.max(self.trans[dm]);
            }
            tape.dlocs.push(dloc);
            tape.dt.push(dt);
            tape.dproducts.extend_from_slice(&self.shader.dproducts);
            if max_trans < self.opts.termination {
                break;
            }
        }
        for m in 0..m_total {
            let tr = self.trans[self.dm(m)];
            tape.predictions.push(std::array::from_fn(|k| self.acc[m][k] + tr * bg[k]));
        }
    }

    #[inline]
    fn route<const N: usize>(routing: GradientRouting, per_term: &[[f64; N]], g: usize) -> [f64; N] {
        match routing {
            GradientRouting::Cumulative => {
                let mut out = [0.0; N];
                for v in &per_term[g..] {
                    for k in 0..N {
                        out[k] += v[k];
                    }
                }
                out
            }
            GradientRouting::OwnGroup => per_term.get(g).copied().unwrap_or([0.0; N]),
        }
    }

    /// Accumulates parameter gradients given `dL/dĈ_m` for each term. The
    /// shader must still hold the direction of the taped ray.
    pub fn backward(&mut self, tape: &RayTape<T>, d_pred: &[[f64; 3]], routing: GradientRouting, grad: &mut ModelGrad<T>) {
        if !tape.hit || tape.dt.is_empty() {
            return;
        }
        let m_total = self.m;
        let md = self.dgroups;
        let model = self.shader.model;
        let (rd, rc) = (model.density.rank(), model.color.rank());
        let (nvd, nvc) = (model.density.n_vec(), model.color.n_vec());
        let dweights = model.density.weights();
        self.trans.iter_mut().for_each(|t| *t = 1.0);
        self.acc.iter_mut().for_each(|a| *a = [0.0; 3]);
        self.fold_acc.iter_mut().for_each(|v| *v = 0.0);

        for i in 0..tape.dt.len() {
            let dt = tape.dt[i];
            for dm in 0..md {
                let alpha = tape.alpha[i * md + dm];
                self.weight[dm] = self.trans[dm] * alpha;
                self.trans_next[dm] = self.trans[dm] * (1.0 - alpha);
            }
            let slot = tape.color_slot[i];
            let has_color = slot != u32::MAX;
            for m in 0..m_total {
                let dm = self.dm(m);
                let (w, t_next) = (self.weight[dm], self.trans_next[dm]);
                let g = d_pred[m];
                let (c, on) = if has_color {
                    let j = slot as usize * m_total + m;
                    (tape.color[j], tape.color_on[j])
                } else {
                    ([0.0; 3], false)
                };
                self.dz[m] = if on {
                    std::array::from_fn(|k| w * g[k] * c[k] * (1.0 - c[k]))
                } else {
                    [0.0; 3]
                };
                let pred = tape.predictions[m];
                let mut own = 0.0;
                let mut rest = 0.0;
                for k in 0..3 {
                    self.acc[m][k] += w * c[k];
                    own += c[k] * g[k];
                    rest += (pred[k] - self.acc[m][k]) * g[k];
                }
                self.draw[m] = [dt * (t_next * own - rest) * tape.dsoftplus[i * md + dm]];
            }
            self.trans.copy_from_slice(&self.trans_next);

            // density
            let dprod = &tape.dproducts[i * rd..(i + 1) * rd];
            let mut any_d = false;
            for (g, sp) in self.dspans.iter().enumerate() {
                let d = Self::route(routing, &self.draw, g)[0];
                any_d |= d != 0.0;
                let dt = T::from_f64(d);
                for r in sp.vec.clone().chain(sp.mat.clone().map(|r| nvd + r)) {
                    self.dpd[r] = dt * dweights[r];
                    grad.density.weights[r] += dt * dprod[r];
                }
            }
            if any_d {
                model.density.sample_factors(&tape.dlocs[i], &mut self.dsamples);
                model
                    .density
                    .scatter_product_grads(&tape.dlocs[i], &self.dsamples, &self.dpd, &mut grad.density);
            }

            // color
            if !has_color {
                continue;
            }
            let slot = slot as usize;
            for g in 0..self.cgroups {
                self.dz_group[g] = Self::route(routing, &self.dz, g);
            }
            let cprod = &tape.cproducts[slot * rc..(slot + 1) * rc];
            let folded = &self.shader.folded;
            for (g, sp) in self.cspans.iter().enumerate() {
                let dzg = self.dz_group[g];
                for r in sp.vec.clone().chain(sp.mat.clone().map(|r| nvc + r)) {
                    let p = cprod[r].to_f64();
                    let mut d = 0.0;
                    for k in 0..3 {
                        d += folded[k * rc + r].to_f64() * dzg[k];
                        self.fold_acc[k * rc + r] += dzg[k] * p;
                    }
                    self.dpc[r] = T::from_f64(d);
                }
            }
            let cloc = &tape.clocs[slot];
            model.color.sample_factors(cloc, &mut self.csamples);
            model
                .color
                .scatter_product_grads(cloc, &self.csamples, &self.dpc, &mut grad.color);
        }

        // fold back through the SH basis
        let b = self.shader.basis.len();
        for k in 0..3 {
            for j in 0..b {
                let y = self.shader.basis[j];
                let row = &mut grad.color.weights[(k * b + j) * rc..(k * b + j + 1) * rc];
                for r in 0..rc {
                    row[r] += T::from_f64(y * self.fold_acc[k * rc + r]);
                }
            }
        }
    }
}

/// Output of [`forward_groups`]: per-ray tapes with `M` predictions each.
#[derive(Clone, Debug)]
pub struct GroupForward<T: Real> {
    pub tapes: Vec<RayTape<T>>,
    pub groups: usize,
}

impl<T: Real> GroupForward<T> {
    /// Prediction `m` for every ray.
    pub fn predictions(&self, m: usize) -> Vec<[f64; 3]> {
        self.tapes.iter().map(|t| t.predictions[m]).collect()
    }
}

/// Renders the `M` rank-prefix predictions for each ray.
pub fn forward_groups<T: Real>(model: &FieldPair<T>, rays: &[Ray], opts: &RenderOptions) -> GroupForward<T> {
    let mut kernel = GroupKernel::new(model, opts);
    let tapes = rays
        .iter()
        .map(|r| {
            let mut tape = RayTape::default();
            kernel.forward(r, 0.0, &mut tape);
            tape
        })
        .collect();
    GroupForward {
        tapes,
        groups: kernel.predictions(),
    }
}

/// `Σ_m ‖gt − Ĉ_m‖²` averaged over rays, over the active terms.
pub fn rank_residual_loss(predictions: &[Vec<[f64; 3]>], gt: &[[f64; 3]], active: Option<&[bool]>) -> f64 {
    let n = gt.len().max(1) as f64;
    predictions
        .iter()
        .enumerate()
        .filter(|(m, _)| active.is_none_or(|a| a[*m]))
        .map(|(_, pred)| {
            pred.iter()
                .zip(gt)
                .map(|(p, g)| (0..3).map(|k| (p[k] - g[k]).powi(2)).sum::<f64>())
                .sum::<f64>()
        })
        .sum::<f64>()
        / n
}

/// Gradient of the batch loss (without regularization) w.r.t. every
/// parameter.
pub fn backward<T: Real>(
    model: &FieldPair<T>,
    forward: &GroupForward<T>,
    gt: &[[f64; 3]],
    terms: &LossTerms,
    opts: &RenderOptions,
) -> Result<ModelGrad<T>> {
    if forward.tapes.len() != gt.len() {
        return Err(Error::Shape(format!(
            "{} tapes but {} target colors",
            forward.tapes.len(),
            gt.len()
        )));
    }
    if forward.groups != prediction_count(model) || terms.active.len() != forward.groups {
        return Err(Error::Shape("tape was recorded for a different rank layout".into()));
    }
    let mut kernel = GroupKernel::new(model, opts);
    let mut grad = ModelGrad::zeros_like(model);
    let n = gt.len() as f64;
    let mut d_pred = vec![[0.0; 3]; forward.groups];
    for (tape, target) in forward.tapes.iter().zip(gt) {
        if tape.predictions.len() != forward.groups {
            return Err(Error::Shape("tape prediction count mismatch".into()));
        }
        loss_gradients(&tape.predictions, target, &terms.active, n, &mut d_pred);
        kernel.backward_for_tape(tape, &d_pred, terms.routing, &mut grad);
    }
    Ok(grad)
}

/// `dL/dĈ_m = 2 (Ĉ_m − gt) / n` for active terms, zero otherwise.
pub(crate) fn loss_gradients(pred: &[[f64; 3]], gt: &[f64; 3], active: &[bool], n: f64, out: &mut [[f64; 3]]) {
    for (m, o) in out.iter_mut().enumerate() {
        *o = if active[m] {
            std::array::from_fn(|k| 2.0 * (pred[m][k] - gt[k]) / n)
        } else {
            [0.0; 3]
        };
    }
}

impl<T: Real> GroupKernel<'_, T> {
    fn backward_for_tape(&mut self, tape: &RayTape<T>, d_pred: &[[f64; 3]], routing: GradientRouting, grad: &mut ModelGrad<T>) {
        if let Some(dir) = tape_direction(tape) {
            self.shader.set_direction(dir);
        }
        self.backward(tape, d_pred, routing, grad);
    }
}

fn tape_direction<T: Real>(tape: &RayTape<T>) -> Option<[f64; 3]> {
    tape.direction
}
