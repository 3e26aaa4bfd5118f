//! Fitting a model to posed images.

mod adam;
mod config;
mod gradcheck;
mod groups;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use adam::{adam_step, AdamParams, AdamState, OptimizerState};
pub use config::{Preset, ResidualMode, TrainConfig};
pub use gradcheck::{gradcheck, GradcheckReport, GradcheckSetup};
pub use groups::{
    backward, forward_groups, prediction_count, rank_residual_loss, GradientRouting, GroupForward, LossTerms,
    ModelGrad, RayTape,
};

use crate::error::{Error, Result};
use crate::field::Aabb;
use crate::io::dataset::{default_aabb, rays_of, View};
use crate::model::FieldPair;
use crate::real::Real;
use crate::render::{build_occupancy, psnr_from_mse, shrink_aabb, Ray};
use groups::{loss_gradients, GroupKernel};

/// Names of the 14 parameter tensors, in [`ModelGrad::tensors`] order.
pub const TENSOR_NAMES: [&str; 14] = [
    "density.S",
    "density.Ux",
    "density.Uy",
    "density.Uz",
    "density.Uxy",
    "density.Uyz",
    "density.Uxz",
    "color.S",
    "color.Ux",
    "color.Uy",
    "color.Uz",
    "color.Uxy",
    "color.Uyz",
    "color.Uxz",
];

/// All parameter tensors of a model, in [`TENSOR_NAMES`] order.
pub fn model_tensors<T: Real>(model: &FieldPair<T>) -> Vec<&[T]> {
    model.density.tensors().into_iter().chain(model.color.tensors()).collect()
}

pub fn model_tensors_mut<T: Real>(model: &mut FieldPair<T>) -> Vec<&mut Vec<T>> {
    let FieldPair { density, color, .. } = model;
    density.tensors_mut().into_iter().chain(color.tensors_mut()).collect()
}

/// Adds the L1 subgradient `λ·sign(θ)` of the density factors (not the
/// weights) and returns `λ Σ|θ|`. When `group` is set only that density
/// group's components are regularized.
pub fn add_l1<T: Real>(model: &FieldPair<T>, lambda: f64, group: Option<usize>, grad: &mut ModelGrad<T>) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let d = &model.density;
    let layout = d.layout();
    let in_group = |owners: &[usize], r: usize| group.is_none_or(|g| owners[r] == g);
    let vg = layout.vec_groups();
    let mg = layout.mat_groups();
    let lam = T::from_f64(lambda);
    let mut total = 0.0;
    let (nv, nm) = (d.n_vec(), d.n_mat());
    for a in 0..3 {
        for (i, (&p, g)) in d.vec_factor(a).iter().zip(grad.density.vec[a].iter_mut()).enumerate() {
            if in_group(&vg, i % nv) {
                total += p.to_f64().abs();
                if p != T::zero() {
                    *g += lam * p.signum();
                }
            }
        }
        for (i, (&p, g)) in d.mat_factor(a).iter().zip(grad.density.mat[a].iter_mut()).enumerate() {
            if in_group(&mg, i % nm) {
                total += p.to_f64().abs();
                if p != T::zero() {
                    *g += lam * p.signum();
                }
            }
        }
    }
    lambda * total
}

/// Number of density factor entries regularized by [`add_l1`].
fn l1_count<T: Real>(model: &FieldPair<T>, group: Option<usize>) -> f64 {
    let d = &model.density;
    let layout = d.layout();
    let (nv, nm) = match group {
        None => (d.n_vec(), d.n_mat()),
        Some(g) => layout.groups().get(g).map_or((0, 0), |c| (c.vec, c.mat)),
    };
    let [x, y, z] = d.resolution();
    let n = nv * (x + y + z) + nm * (x * y + y * z + x * z);
    n.max(1) as f64
}

/// One row of the loss curve.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    /// Batch PSNR of each prediction `Ĉ_m`.
    pub group_psnr: Vec<f64>,
}

/// Writes `step,loss,psnr_1..psnr_M`.
pub fn write_loss_csv(records: &[StepRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let m = records.first().map_or(0, |r| r.group_psnr.len());
    let mut header = vec!["step".to_string(), "loss".to_string()];
    header.extend((1..=m).map(|i| format!("psnr_{i}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.step.to_string(), format!("{:.8e}", r.loss)];
        row.extend(r.group_psnr.iter().map(|p| format!("{p:.4}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: FieldPair,
    pub optimizer: OptimizerState,
    pub records: Vec<StepRecord>,
}

/// Stateful training loop over a fixed set of rays.
pub struct Trainer {
    config: TrainConfig,
    rays: Vec<Ray>,
    colors: Vec<[f32; 3]>,
    model: FieldPair,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    step: usize,
    voxels: usize,
    stage: usize,
    worker_grads: Vec<ModelGrad>,
    records: Vec<StepRecord>,
}

impl Trainer {
    pub fn new(views: &[View], config: TrainConfig) -> Result<Self> {
        let (rays, colors) = rays_of(views);
        Self::from_rays(rays, colors, config)
    }

    pub fn from_rays(rays: Vec<Ray>, colors: Vec<[f32; 3]>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if rays.is_empty() || rays.len() != colors.len() {
            return Err(Error::InvalidArgument(format!(
                "need at least one training ray with a color ({} rays, {} colors)",
                rays.len(),
                colors.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let aabb = config.aabb.unwrap_or_else(default_aabb);
        let res = aabb.resolution_for_voxels(config.initial_voxels);
        let model = FieldPair::init_random(
            aabb,
            res,
            config.density_layout.clone(),
            config.color_layout.clone(),
            config.shading,
            &mut rng,
        )?;
        Ok(Self {
            optimizer: fresh_state(&model),
            worker_grads: vec![ModelGrad::zeros_like(&model); config.workers],
            voxels: config.initial_voxels,
            config,
            rays,
            colors,
            model,
            rng,
            step: 0,
            stage: 0,
            records: Vec::new(),
        })
    }

    pub fn model(&self) -> &FieldPair {
        &self.model
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.iterations
    }

    fn loss_terms(&self) -> (LossTerms, Option<usize>) {
        let m = self.config.groups();
        match self.config.residual {
            ResidualMode::ParallelNoDetach => (LossTerms::all(m, GradientRouting::Cumulative), None),
            ResidualMode::ParallelDetach => (LossTerms::all(m, GradientRouting::OwnGroup), None),
            ResidualMode::Sequential => {
                let stage = (self.step * m / self.config.iterations).min(m - 1);
                (LossTerms::single_stage(m, stage), Some(stage))
            }
        }
    }

    /// Runs one optimization step and any schedule events that follow it.
    pub fn step(&mut self) -> Result<StepRecord> {
        let cfg = &self.config;
        let m_total = prediction_count(&self.model);
        let (terms, stage) = self.loss_terms();
        if let Some(s) = stage {
            if s != self.stage {
                self.stage = s;
                self.optimizer = fresh_state(&self.model);
            }
        }
        let batch: Vec<(usize, f64)> = (0..cfg.batch_size)
            .map(|_| {
                let i = self.rng.random_range(0..self.rays.len());
                let j = if cfg.jitter { self.rng.random::<f64>() } else { 0.0 };
                (i, j)
            })
            .collect();
        let chunk = batch.len().div_ceil(cfg.workers);
        let n = batch.len() as f64;
        let model = &self.model;
        let (rays, colors) = (&self.rays, &self.colors);
        let opts = cfg.render;
        let sse: Vec<Vec<f64>> = self
            .worker_grads
            .par_iter_mut()
            .zip(batch.par_chunks(chunk.max(1)))
            .map(|(grad, part)| {
                grad.fill_zero();
                let mut kernel = GroupKernel::new(model, &opts);
                let mut tape = RayTape::default();
                let mut d_pred = vec![[0.0; 3]; m_total];
                let mut sse = vec![0.0; m_total];
                for &(i, jitter) in part {
                    kernel.forward(&rays[i], jitter, &mut tape);
                    let gt = colors[i].map(|v| v as f64);
                    for (m, p) in tape.predictions.iter().enumerate() {
                        sse[m] += (0..3).map(|k| (p[k] - gt[k]).powi(2)).sum::<f64>();
                    }
                    loss_gradients(&tape.predictions, &gt, &terms.active, n, &mut d_pred);
                    kernel.backward(&tape, &d_pred, terms.routing, grad);
                }
                sse
            })
            .collect();
        // fixed-order reduction
        let (first, rest) = self.worker_grads.split_first_mut().expect("at least one worker");
        for g in rest.iter().take(sse.len().saturating_sub(1)) {
            first.add_assign(g);
        }
        let mut group_sse = vec![0.0; m_total];
        for s in &sse {
            for (a, b) in group_sse.iter_mut().zip(s) {
                *a += b;
            }
        }
        let data_loss: f64 = group_sse
            .iter()
            .zip(&terms.active)
            .filter(|(_, &a)| a)
            .map(|(s, _)| s / n)
            .sum();
        let l1 = if self.step >= cfg.l1_from_step {
            add_l1(&self.model, cfg.l1_density / l1_count(&self.model, stage), stage, first)
        } else {
            0.0
        };
        let loss = data_loss + l1;
        if !loss.is_finite() {
            let tensor = first
                .tensors()
                .iter()
                .position(|t| t.iter().any(|v| !v.is_finite()))
                .map_or("loss", |i| TENSOR_NAMES[i]);
            return Err(Error::NonFinite {
                tensor: tensor.to_string(),
                step: self.step,
            });
        }
        if let Some(i) = first.tensors().iter().position(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite {
                tensor: TENSOR_NAMES[i].to_string(),
                step: self.step,
            });
        }

        let decay = cfg.lr_decay.powf(self.step as f64 / cfg.iterations.max(1) as f64);
        let hp = AdamParams {
            beta1: cfg.betas.0,
            beta2: cfg.betas.1,
            eps: cfg.eps,
        };
        let grads = first.tensors();
        for (i, (param, state)) in model_tensors_mut(&mut self.model)
            .into_iter()
            .zip(self.optimizer.tensors.iter_mut())
            .enumerate()
        {
            let lr = if i % 7 == 0 { cfg.lr_weights } else { cfg.lr_factors } * decay;
            adam_step(param, grads[i], state, lr, &hp)?;
        }

        let record = StepRecord {
            step: self.step,
            loss,
            group_psnr: group_sse.iter().map(|s| psnr_from_mse(s / (3.0 * n))).collect(),
        };
        self.step += 1;
        self.apply_schedule()?;
        self.records.push(record.clone());
        Ok(record)
    }

    fn apply_schedule(&mut self) -> Result<()> {
        let s = self.step;
        let cfg = &self.config;
        let mut reshaped = false;
        if cfg.occupancy_steps.contains(&s) {
            let occ_res = |b: &Aabb| b.resolution_for_voxels(cfg.occupancy_resolution.pow(3));
            if cfg.shrink && cfg.occupancy_steps.first() == Some(&s) {
                let old = self.model.aabb;
                let grid = build_occupancy(&self.model, occ_res(&old), cfg.occupancy_threshold, cfg.occupancy_dilation);
                let new = shrink_aabb(&grid, &old);
                if new != old {
                    let (os, ns) = (old.size(), new.size());
                    let map: [(f64, f64); 3] = std::array::from_fn(|a| ((new.min[a] - old.min[a]) / os[a], ns[a] / os[a]));
                    let res = new.resolution_for_voxels(self.voxels);
                    self.model = self.model.map_fields(|f| f.resample(res, map))?;
                    self.model.aabb = new;
                    reshaped = true;
                    log::info!("step {s}: box shrunk to {:?}..{:?}, grid {res:?}", new.min, new.max);
                }
            }
            let aabb = self.model.aabb;
            let grid = build_occupancy(&self.model, occ_res(&aabb), cfg.occupancy_threshold, cfg.occupancy_dilation);
            if grid.occupied_count() == 0 {
                // nothing learned yet; an empty mask would freeze training
                log::warn!("step {s}: occupancy grid is empty, not applied");
            } else {
                log::info!("step {s}: occupancy {}/{} cells", grid.occupied_count(), grid.cell_count());
                self.model.occupancy = Some(grid);
            }
        }
        if let Some(&(_, voxels)) = cfg.upsample.iter().find(|(at, _)| *at == s) {
            self.voxels = voxels;
            let res = self.model.aabb.resolution_for_voxels(voxels);
            self.model = self.model.map_fields(|f| f.upsample(res))?;
            reshaped = true;
            log::info!("step {s}: upsampled to {res:?}");
        }
        if reshaped {
            // moments no longer line up with the resized factors
            self.optimizer = fresh_state(&self.model);
            self.worker_grads = vec![ModelGrad::zeros_like(&self.model); self.config.workers];
        }
        Ok(())
    }

    /// Runs the remaining steps; `on_step` sees every record and may stop
    /// early by returning `false`.
    pub fn run_with(mut self, mut on_step: impl FnMut(&Trainer, &StepRecord) -> bool) -> Result<TrainOutput> {
        while !self.is_done() {
            let rec = self.step()?;
            if !on_step(&self, &rec) {
                break;
            }
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> TrainOutput {
        TrainOutput {
            model: self.model,
            optimizer: self.optimizer,
            records: self.records,
        }
    }
}

fn fresh_state(model: &FieldPair) -> OptimizerState {
    let lengths: Vec<usize> = model_tensors(model).iter().map(|t| t.len()).collect();
    OptimizerState::for_lengths(&lengths)
}

/// Trains a model on `views` with `config`.
pub fn train(views: &[View], config: TrainConfig) -> Result<TrainOutput> {
    Trainer::new(views, config)?.run_with(|_, _| true)
}
