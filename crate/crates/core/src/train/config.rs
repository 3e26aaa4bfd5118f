use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::field::{Aabb, RankCount, RankLayout};
use crate::render::{RenderOptions, DEFAULT_OCCUPANCY_DILATION, DEFAULT_OCCUPANCY_RESOLUTION, DEFAULT_OCCUPANCY_THRESHOLD};
use crate::shading::ShadingConfig;

/// How the `M` rank-prefix losses are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ResidualMode {
    /// Every `Ĉ_m` trains all groups `≤ m`.
    #[default]
    ParallelNoDetach,
    /// Every `Ĉ_m` trains only group `m`.
    ParallelDetach,
    /// Groups are trained one after another, each for `iterations / M`
    /// steps with the earlier groups frozen.
    Sequential,
}

impl FromStr for ResidualMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nodetach" | "parallel-no-detach" => Ok(Self::ParallelNoDetach),
            "detach" | "parallel-detach" => Ok(Self::ParallelDetach),
            "sequential" => Ok(Self::Sequential),
            _ => Err(Error::InvalidArgument(format!(
                "unknown residual mode '{s}' (expected nodetach, detach or sequential)"
            ))),
        }
    }
}

impl fmt::Display for ResidualMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::ParallelNoDetach => "nodetach",
            Self::ParallelDetach => "detach",
            Self::Sequential => "sequential",
        })
    }
}

/// Named layout and schedule presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Cp,
    Hy,
    HyS,
    Desk,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cp" => Ok(Self::Cp),
            "hy" => Ok(Self::Hy),
            "hy-s" => Ok(Self::HyS),
            "desk" => Ok(Self::Desk),
            _ => Err(Error::InvalidArgument(format!(
                "unknown preset '{s}' (expected cp, hy, hy-s or desk)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cp => "cp",
            Self::Hy => "hy",
            Self::HyS => "hy-s",
            Self::Desk => "desk",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub lr_factors: f64,
    pub lr_weights: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    /// Learning rates are multiplied by `lr_decay^(step / iterations)`;
    /// `1.0` keeps them constant.
    pub lr_decay: f64,
    /// Weight of the mean absolute density factor entry.
    pub l1_density: f64,
    /// The regularizer is off before this step so the initially transparent
    /// field can pick up density.
    pub l1_from_step: usize,
    pub density_layout: RankLayout,
    pub color_layout: RankLayout,
    pub shading: ShadingConfig,
    /// Starting box; the dataset default is used when `None`.
    pub aabb: Option<Aabb>,
    pub initial_voxels: usize,
    /// `(step, total voxel count)`, applied after the given number of steps.
    pub upsample: Vec<(usize, usize)>,
    pub occupancy_steps: Vec<usize>,
    /// Shrink the box at the first occupancy step.
    pub shrink: bool,
    pub occupancy_resolution: usize,
    pub occupancy_threshold: f64,
    pub occupancy_dilation: usize,
    pub residual: ResidualMode,
    pub render: RenderOptions,
    /// Random offset of the sample grid per training ray.
    pub jitter: bool,
    pub seed: u64,
    /// Number of gradient accumulators; results are reproducible for a
    /// fixed value regardless of the thread count.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::Hy)
    }
}

/// Voxel counts spaced log-uniformly from `n0` to `n1` (exclusive of `n0`).
fn log_schedule(steps: &[usize], n0: usize, n1: usize) -> Vec<(usize, usize)> {
    let k = steps.len();
    let (a, b) = ((n0 as f64).ln(), (n1 as f64).ln());
    steps
        .iter()
        .enumerate()
        .map(|(i, &s)| (s, (a + (b - a) * (i + 1) as f64 / k as f64).exp().round() as usize))
        .collect()
}

fn layout(groups: &[(usize, usize)]) -> RankLayout {
    RankLayout::new(groups.iter().map(|&(v, m)| RankCount::new(v, m)).collect()).expect("preset layout")
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        const FULL_UPSAMPLE: [usize; 5] = [2000, 3000, 4000, 5500, 7000];
        let base = Self {
            iterations: 30000,
            batch_size: 4096,
            lr_factors: 0.02,
            lr_weights: 0.001,
            betas: (0.9, 0.99),
            eps: 1e-8,
            lr_decay: 1.0,
            l1_density: 1e-4,
            l1_from_step: 2000,
            density_layout: layout(&[(96, 0)]),
            color_layout: layout(&[(96, 0); 4]),
            shading: ShadingConfig::default(),
            aabb: None,
            initial_voxels: 128usize.pow(3),
            upsample: log_schedule(&FULL_UPSAMPLE, 128usize.pow(3), 500usize.pow(3)),
            occupancy_steps: vec![2000, 4000],
            shrink: true,
            occupancy_resolution: DEFAULT_OCCUPANCY_RESOLUTION,
            occupancy_threshold: DEFAULT_OCCUPANCY_THRESHOLD,
            occupancy_dilation: DEFAULT_OCCUPANCY_DILATION,
            residual: ResidualMode::default(),
            render: RenderOptions::default(),
            jitter: false,
            seed: 0,
            workers: 1,
        };
        match preset {
            Preset::Cp => base,
            Preset::Hy => Self {
                density_layout: layout(&[(64, 16)]),
                color_layout: layout(&[(64, 16); 4]),
                upsample: log_schedule(&FULL_UPSAMPLE, 128usize.pow(3), 300usize.pow(3)),
                ..base
            },
            Preset::HyS => Self {
                density_layout: layout(&[(96, 0)]),
                color_layout: layout(&[(96, 0), (0, 4), (0, 12), (0, 16), (0, 32)]),
                upsample: log_schedule(&FULL_UPSAMPLE, 128usize.pow(3), 300usize.pow(3)),
                ..base
            },
            Preset::Desk => Self {
                iterations: 3000,
                density_layout: layout(&[(16, 0)]),
                color_layout: layout(&[(16, 0), (0, 1), (0, 1), (0, 2), (0, 4)]),
                initial_voxels: 32usize.pow(3),
                upsample: log_schedule(&[200, 300, 400, 550, 700], 32usize.pow(3), 64usize.pow(3)),
                occupancy_steps: vec![200, 400],
                l1_from_step: 200,
                occupancy_resolution: 64,
                ..base
            },
        }
    }

    /// Merges color (and density) groups so that at most `m` remain; `m = 1`
    /// gives the plain single-loss model.
    pub fn with_groups(mut self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidArgument("group count must be at least 1".into()));
        }
        self.color_layout = self.color_layout.merged_tail(m)?;
        self.density_layout = self.density_layout.merged_tail(m)?;
        Ok(self)
    }

    /// Rescales every schedule to a run of `iterations` steps.
    pub fn with_iterations(mut self, iterations: usize) -> Self {
        let scale = |s: usize| ((s as f64) * iterations as f64 / self.iterations as f64).round().max(1.0) as usize;
        self.upsample = self.upsample.iter().map(|&(s, n)| (scale(s), n)).collect();
        self.occupancy_steps = self.occupancy_steps.iter().map(|&s| scale(s)).collect();
        self.l1_from_step = scale(self.l1_from_step);
        self.iterations = iterations;
        self
    }

    /// Number of rank-prefix predictions.
    pub fn groups(&self) -> usize {
        self.density_layout.num_groups().max(self.color_layout.num_groups())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.workers == 0 {
            return bad("worker count must be at least 1");
        }
        if self.upsample.windows(2).any(|w| w[0].0 > w[1].0) {
            return bad("upsample schedule must be sorted by step");
        }
        if self.occupancy_steps.windows(2).any(|w| w[0] > w[1]) {
            return bad("occupancy schedule must be sorted by step");
        }
        if !(self.lr_decay > 0.0) || !(self.lr_factors >= 0.0) || !(self.lr_weights >= 0.0) {
            return bad("learning rates and decay must be non-negative");
        }
        if self.residual == ResidualMode::Sequential && self.iterations < self.groups() {
            return bad("sequential training needs at least one step per group");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_layouts() {
        let c = TrainConfig::preset(Preset::Desk);
        assert_eq!(c.color_layout.n_vec(), 16);
        assert_eq!(c.color_layout.n_mat(), 8);
        let cum: Vec<usize> = (1..=c.color_layout.num_groups()).map(|m| c.color_layout.prefix(m).mat).collect();
        assert_eq!(cum, vec![0, 1, 2, 4, 8]);
        assert_eq!(c.upsample.last().unwrap().1, 64usize.pow(3));
        assert_eq!(c.groups(), 5);
        c.validate().unwrap();
    }

    #[test]
    fn paper_layouts() {
        let cp = TrainConfig::preset(Preset::Cp);
        assert_eq!((cp.density_layout.n_vec(), cp.color_layout.n_vec()), (96, 384));
        assert_eq!(cp.upsample.last().unwrap().1, 500usize.pow(3));
        let hy = TrainConfig::preset(Preset::Hy);
        assert_eq!(hy.color_layout.total(), RankCount::new(256, 64));
        assert_eq!(hy.upsample.last().unwrap().1, 300usize.pow(3));
        let hys = TrainConfig::preset(Preset::HyS);
        let cum: Vec<usize> = (2..=5).map(|m| hys.color_layout.prefix(m).mat).collect();
        assert_eq!(cum, vec![4, 16, 32, 64]);
    }

    #[test]
    fn group_merge_and_rescale() {
        let c = TrainConfig::preset(Preset::Desk).with_groups(1).unwrap();
        assert_eq!(c.groups(), 1);
        assert_eq!(c.color_layout.total(), RankCount::new(16, 8));
        let c = TrainConfig::preset(Preset::Desk).with_iterations(300);
        assert_eq!(c.occupancy_steps, vec![20, 40]);
        assert!(TrainConfig::preset(Preset::Desk).with_groups(0).is_err());
    }
}
