use rayon::prelude::*;

use crate::field::Aabb;
use crate::model::FieldPair;
use crate::real::Real;
use crate::shading::softplus;

pub const DEFAULT_OCCUPANCY_RESOLUTION: usize = 128;
pub const DEFAULT_OCCUPANCY_THRESHOLD: f64 = 1e-2;
pub const DEFAULT_OCCUPANCY_DILATION: usize = 1;

/// Binary mask over a model's bounding box (in normalized coordinates).
/// Cells are stored x-major, packed eight per byte, least significant bit
/// first.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    resolution: [usize; 3],
    threshold: f64,
    dilation: usize,
    bits: Vec<u8>,
}

impl OccupancyGrid {
    pub fn from_bits(resolution: [usize; 3], threshold: f64, dilation: usize, bits: Vec<u8>) -> Option<Self> {
        let cells = resolution.iter().product::<usize>();
        (resolution.iter().all(|&n| n > 0) && bits.len() == cells.div_ceil(8)).then_some(Self {
            resolution,
            threshold,
            dilation,
            bits,
        })
    }

    /// Marks every cell whose center density exceeds `threshold`, then
    /// dilates by `dilation` cells (cube neighbourhood). `density` receives
    /// the normalized cell center.
    pub fn from_density_fn<F>(resolution: [usize; 3], threshold: f64, dilation: usize, density: F) -> Self
    where
        F: Fn([f64; 3]) -> f64 + Sync,
    {
        let [nx, ny, nz] = resolution;
        let raw: Vec<bool> = (0..nx)
            .into_par_iter()
            .flat_map_iter(|i| {
                let density = &density;
                (0..ny).flat_map(move |j| {
                    (0..nz).map(move |k| {
                        let u = [
                            (i as f64 + 0.5) / nx as f64,
                            (j as f64 + 0.5) / ny as f64,
                            (k as f64 + 0.5) / nz as f64,
                        ];
                        density(u) > threshold
                    })
                })
            })
            .collect();
        let dilated = dilate(&raw, resolution, dilation);
        let mut bits = vec![0u8; dilated.len().div_ceil(8)];
        for (idx, &on) in dilated.iter().enumerate() {
            if on {
                bits[idx >> 3] |= 1 << (idx & 7);
            }
        }
        Self {
            resolution,
            threshold,
            dilation,
            bits,
        }
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn dilation(&self) -> usize {
        self.dilation
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn occupied_count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }

    #[inline]
    pub fn is_occupied_cell(&self, i: usize, j: usize, k: usize) -> bool {
        let idx = (i * self.resolution[1] + j) * self.resolution[2] + k;
        self.bits[idx >> 3] & (1 << (idx & 7)) != 0
    }

    /// Occupancy at a normalized coordinate (clamped into the grid).
    #[inline]
    pub fn is_occupied(&self, u: [f64; 3]) -> bool {
        let c: [usize; 3] = std::array::from_fn(|a| {
            let n = self.resolution[a];
            ((u[a] * n as f64).floor().max(0.0) as usize).min(n - 1)
        });
        self.is_occupied_cell(c[0], c[1], c[2])
    }

    /// Tight box around the occupied cells of a grid spanning `aabb`, or
    /// `None` if nothing is occupied.
    pub fn shrink_aabb(&self, aabb: &Aabb) -> Option<Aabb> {
        let mut lo = self.resolution;
        let mut hi = [0usize; 3];
        let mut any = false;
        for i in 0..self.resolution[0] {
            for j in 0..self.resolution[1] {
                for k in 0..self.resolution[2] {
                    if self.is_occupied_cell(i, j, k) {
                        any = true;
                        for (a, c) in [i, j, k].into_iter().enumerate() {
                            lo[a] = lo[a].min(c);
                            hi[a] = hi[a].max(c + 1);
                        }
                    }
                }
            }
        }
        if !any {
            return None;
        }
        let size = aabb.size();
        Some(Aabb {
            min: std::array::from_fn(|a| aabb.min[a] + size[a] * lo[a] as f64 / self.resolution[a] as f64),
            max: std::array::from_fn(|a| aabb.min[a] + size[a] * hi[a] as f64 / self.resolution[a] as f64),
        })
    }
}

fn dilate(mask: &[bool], res: [usize; 3], radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let stride = [res[1] * res[2], res[2], 1];
    let mut cur = mask.to_vec();
    for axis in 0..3 {
        let mut next = vec![false; cur.len()];
        for (idx, slot) in next.iter_mut().enumerate() {
            let c = (idx / stride[axis]) % res[axis];
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(res[axis] - 1);
            let base = idx - c * stride[axis];
            *slot = (lo..=hi).any(|n| cur[base + n * stride[axis]]);
        }
        cur = next;
    }
    cur
}

/// Occupancy of a model's density field, evaluated at cell centers.
pub fn build_occupancy<T: Real>(model: &FieldPair<T>, resolution: [usize; 3], threshold: f64, dilation: usize) -> OccupancyGrid {
    let shift = model.shading.density_shift;
    OccupancyGrid::from_density_fn(resolution, threshold, dilation, |u| {
        let uu = [T::from_f64(u[0]), T::from_f64(u[1]), T::from_f64(u[2])];
        let raw = model
            .density
            .query_features(uu, None)
            .expect("full-rank query")[0]
            .to_f64();
        softplus(raw + shift)
    })
}

/// Shrinks the model box to its occupied region; keeps the old box (with a
/// warning) when the grid is empty.
pub fn shrink_aabb(grid: &OccupancyGrid, aabb: &Aabb) -> Aabb {
    match grid.shrink_aabb(aabb) {
        Some(b) => b,
        None => {
            log::warn!("occupancy grid is empty; keeping bounding box {aabb:?}");
            *aabb
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_density_occupies_everything() {
        let g = OccupancyGrid::from_density_fn([4, 5, 6], 1e-2, 1, |_| 10.0);
        assert_eq!(g.occupied_count(), 120);
        let b = Aabb::cube(1.0);
        assert_eq!(g.shrink_aabb(&b), Some(b));
    }

    #[test]
    fn single_voxel_shrinks_to_three_cells() {
        let n = 9;
        let g = OccupancyGrid::from_density_fn([n; 3], 1e-2, 1, |u| {
            if u.iter().all(|&c| (c - 0.5).abs() < 0.5 / n as f64) { 1.0 } else { 0.0 }
        });
        assert_eq!(g.occupied_count(), 27);
        let b = Aabb::new([0.0; 3], [9.0; 3]).unwrap();
        let s = g.shrink_aabb(&b).unwrap();
        assert_eq!(s.min, [3.0; 3]);
        assert_eq!(s.max, [6.0; 3]);
    }

    #[test]
    fn empty_grid_keeps_box() {
        let g = OccupancyGrid::from_density_fn([4; 3], 1e-2, 1, |_| 0.0);
        let b = Aabb::cube(2.0);
        assert_eq!(g.shrink_aabb(&b), None);
        assert_eq!(shrink_aabb(&g, &b), b);
    }

    #[test]
    fn lookup_clamps_to_grid() {
        let g = OccupancyGrid::from_density_fn([2, 2, 2], 0.5, 0, |u| if u[0] > 0.5 { 1.0 } else { 0.0 });
        assert!(g.is_occupied([1.0, 0.0, 0.0]));
        assert!(g.is_occupied([1.3, 0.2, 0.9]));
        assert!(!g.is_occupied([-0.2, 0.2, 0.9]));
    }
}
