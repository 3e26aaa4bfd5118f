//! Hybrid vector/matrix rank decomposition of a multichannel 3D feature volume.
//!
//! A field with `C` channels over an `H × W × D` grid stores a rank-weight
//! matrix `S` (`C × (n_vec + n_mat)`, columns ordered `[vec | mat]`), three
//! per-axis vector factors and three per-plane matrix factors. All factor
//! tensors keep the rank index innermost so that one grid node holds every
//! rank contiguously.
//!
//! Continuous queries sample each factor first (linear interpolation for
//! vectors, bilinear for planes), multiply the samples per rank and finally
//! apply `S`. Node `i` of an axis with `n` nodes sits at `u = i / (n - 1)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::real::Real;

/// Axis pairs spanned by the three matrix factors: xy, yz, xz.
pub const PLANES: [(usize, usize); 3] = [(0, 1), (1, 2), (0, 2)];

/// Upper bound on the element count `reconstruct_dense` will materialize.
pub const DENSE_LIMIT: usize = 1 << 26;

/// Number of vector and matrix rank components, used both for one rank
/// group and for cumulative counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct RankCount {
    pub vec: usize,
    pub mat: usize,
}

impl RankCount {
    pub const fn new(vec: usize, mat: usize) -> Self {
        Self { vec, mat }
    }

    pub fn total(&self) -> usize {
        self.vec + self.mat
    }

    pub fn fits_in(&self, other: RankCount) -> bool {
        self.vec <= other.vec && self.mat <= other.mat
    }
}

impl std::fmt::Display for RankCount {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.vec, self.mat)
    }
}

/// Ordered rank groups. Group `m` ends at the dividing rank `R_m`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankLayout {
    groups: Vec<RankCount>,
    total: RankCount,
}

impl RankLayout {
    pub fn new(groups: Vec<RankCount>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::Layout("at least one rank group is required".into()));
        }
        if let Some(i) = groups.iter().position(|g| g.total() == 0) {
            return Err(Error::Layout(format!("group {i} is empty")));
        }
        let total = groups.iter().fold(RankCount::default(), |acc, g| {
            RankCount::new(acc.vec + g.vec, acc.mat + g.mat)
        });
        Ok(Self { groups, total })
    }

    /// A layout with a single group holding every component.
    pub fn single(n_vec: usize, n_mat: usize) -> Result<Self> {
        Self::new(vec![RankCount::new(n_vec, n_mat)])
    }

    pub fn n_vec(&self) -> usize {
        self.total.vec
    }

    pub fn n_mat(&self) -> usize {
        self.total.mat
    }

    pub fn total(&self) -> RankCount {
        self.total
    }

    pub fn rank(&self) -> usize {
        self.total.total()
    }

    pub fn groups(&self) -> &[RankCount] {
        &self.groups
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Cumulative counts after the first `m` groups (`m = 0` gives zero).
    pub fn prefix(&self, m: usize) -> RankCount {
        self.groups[..m.min(self.groups.len())]
            .iter()
            .fold(RankCount::default(), |acc, g| {
                RankCount::new(acc.vec + g.vec, acc.mat + g.mat)
            })
    }

    /// Dividing ranks `R_1..R_M`.
    pub fn dividing_ranks(&self) -> Vec<RankCount> {
        (1..=self.groups.len()).map(|m| self.prefix(m)).collect()
    }

    /// Group index of every vector component.
    pub fn vec_groups(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, c)| std::iter::repeat_n(g, c.vec))
            .collect()
    }

    /// Group index of every matrix component.
    pub fn mat_groups(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(g, c)| std::iter::repeat_n(g, c.mat))
            .collect()
    }

    /// Layout of the components kept by a prefix truncation.
    pub fn truncated(&self, keep: RankCount) -> Result<Self> {
        if !keep.fits_in(self.total) {
            return Err(Error::Layout(format!(
                "keep {keep} exceeds layout {}",
                self.total
            )));
        }
        let vec_keep: Vec<usize> = (0..keep.vec).collect();
        let mat_keep: Vec<usize> = (0..keep.mat).collect();
        self.regroup(&vec_keep, &mat_keep)
    }

    /// Group table after keeping only the given (sorted) component indices.
    fn regroup(&self, vec_keep: &[usize], mat_keep: &[usize]) -> Result<Self> {
        let mut counts = vec![RankCount::default(); self.groups.len()];
        let vg = self.vec_groups();
        let mg = self.mat_groups();
        for &r in vec_keep {
            counts[vg[r]].vec += 1;
        }
        for &r in mat_keep {
            counts[mg[r]].mat += 1;
        }
        counts.retain(|c| c.total() > 0);
        Self::new(counts)
    }

    /// Groups of `self` followed by groups of `other`.
    pub fn concat(&self, other: &RankLayout) -> RankLayout {
        let mut groups = self.groups.clone();
        groups.extend_from_slice(&other.groups);
        Self::new(groups).expect("concatenation of valid layouts is valid")
    }

    /// Collapses all groups into one.
    pub fn merged(&self) -> RankLayout {
        Self::new(vec![self.total]).expect("non-empty layout")
    }

    /// Merges groups `m..` into a single trailing group so that at most
    /// `m` groups remain.
    pub fn merged_tail(&self, m: usize) -> Result<RankLayout> {
        if m == 0 {
            return Err(Error::Layout("group count must be at least 1".into()));
        }
        if m >= self.groups.len() {
            return Ok(self.clone());
        }
        let mut groups = self.groups[..m - 1].to_vec();
        let tail = self.groups[m - 1..]
            .iter()
            .fold(RankCount::default(), |acc, g| {
                RankCount::new(acc.vec + g.vec, acc.mat + g.mat)
            });
        groups.push(tail);
        Self::new(groups)
    }
}

/// Axis-aligned bounding box in world units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(min[a] < max[a]) || !min[a].is_finite() || !max[a].is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "degenerate box {min:?}..{max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn cube(half: f64) -> Self {
        Self {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn size(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn diagonal(&self) -> f64 {
        let s = self.size();
        (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt()
    }

    pub fn volume(&self) -> f64 {
        let s = self.size();
        s[0] * s[1] * s[2]
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    /// Maps a world point to `[0,1]³` (unclamped).
    #[inline]
    pub fn normalize(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.min[0]) / (self.max[0] - self.min[0]),
            (p[1] - self.min[1]) / (self.max[1] - self.min[1]),
            (p[2] - self.min[2]) / (self.max[2] - self.min[2]),
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn union(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: std::array::from_fn(|a| self.min[a].min(other.min[a])),
            max: std::array::from_fn(|a| self.max[a].max(other.max[a])),
        }
    }

    /// Per-axis grid resolution with roughly `voxels` cells, proportional to
    /// the box edge lengths.
    pub fn resolution_for_voxels(&self, voxels: usize) -> [usize; 3] {
        let s = self.size();
        let edge = (self.volume() / voxels.max(1) as f64).cbrt();
        std::array::from_fn(|a| ((s[a] / edge).round() as usize).max(2))
    }
}

/// Interpolation stencil along one axis.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AxisLerp<T> {
    pub i0: usize,
    pub w: T,
}

#[inline(always)]
fn axis_lerp<T: Real>(u: T, n: usize) -> AxisLerp<T> {
    let last = n - 1;
    let g = u.max(T::zero()).min(T::one()) * T::from_f64(last as f64);
    let i0 = g.floor().to_f64() as usize;
    let i0 = i0.min(last - 1);
    AxisLerp {
        i0,
        w: g - T::from_f64(i0 as f64),
    }
}

/// A continuous coordinate resolved against one grid resolution.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Located<T> {
    pub axes: [AxisLerp<T>; 3],
}

/// Per-rank factor samples at one location; reused across queries.
#[derive(Clone, Debug, Default)]
pub(crate) struct FactorSamples<T> {
    pub vec: [Vec<T>; 3],
    pub mat: [Vec<T>; 3],
}

impl<T: Real> FactorSamples<T> {
    pub fn for_layout(layout: &RankLayout) -> Self {
        Self {
            vec: std::array::from_fn(|_| vec![T::zero(); layout.n_vec()]),
            mat: std::array::from_fn(|_| vec![T::zero(); layout.n_mat()]),
        }
    }
}

/// Which rank components a truncation keeps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Keep {
    /// The first `vec` vector and first `mat` matrix components.
    Prefix(RankCount),
    /// Explicit component indices; order is irrelevant, duplicates rejected.
    Indices { vec: Vec<usize>, mat: Vec<usize> },
}

/// One channel group's decomposition: rank weights plus factor tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct DecomposedField<T: Real = f32> {
    channels: usize,
    resolution: [usize; 3],
    layout: RankLayout,
    weights: Vec<T>,
    vec_factors: [Vec<T>; 3],
    mat_factors: [Vec<T>; 3],
}

impl<T: Real> DecomposedField<T> {
    pub fn zeros(channels: usize, resolution: [usize; 3], layout: RankLayout) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("field needs at least one channel".into()));
        }
        if resolution.iter().any(|&n| n < 2) {
            return Err(Error::InvalidArgument(format!(
                "every axis needs at least two nodes, got {resolution:?}"
            )));
        }
        let (nv, nm) = (layout.n_vec(), layout.n_mat());
        Ok(Self {
            channels,
            resolution,
            weights: vec![T::zero(); channels * layout.rank()],
            vec_factors: std::array::from_fn(|a| vec![T::zero(); resolution[a] * nv]),
            mat_factors: std::array::from_fn(|p| {
                let (a, b) = PLANES[p];
                vec![T::zero(); resolution[a] * resolution[b] * nm]
            }),
            layout,
        })
    }

    /// Builds a field from raw tensors, validating every length.
    pub fn from_parts(
        channels: usize,
        resolution: [usize; 3],
        layout: RankLayout,
        weights: Vec<T>,
        vec_factors: [Vec<T>; 3],
        mat_factors: [Vec<T>; 3],
    ) -> Result<Self> {
        let mut field = Self::zeros(channels, resolution, layout)?;
        if weights.len() != field.weights.len() {
            return Err(Error::Shape(format!(
                "rank weights have {} entries, expected {}",
                weights.len(),
                field.weights.len()
            )));
        }
        for a in 0..3 {
            if vec_factors[a].len() != field.vec_factors[a].len() {
                return Err(Error::Shape(format!("vector factor {a} has wrong length")));
            }
            if mat_factors[a].len() != field.mat_factors[a].len() {
                return Err(Error::Shape(format!("matrix factor {a} has wrong length")));
            }
        }
        field.weights = weights;
        field.vec_factors = vec_factors;
        field.mat_factors = mat_factors;
        Ok(field)
    }

    /// Fills weights and factors uniformly in `[-weight_scale, weight_scale]`
    /// and `[-factor_scale, factor_scale]`.
    pub fn randomize<R: Rng + ?Sized>(&mut self, rng: &mut R, factor_scale: f64, weight_scale: f64) {
        for w in &mut self.weights {
            *w = T::from_f64(rng.random_range(-1.0..1.0) * weight_scale);
        }
        for t in self.vec_factors.iter_mut().chain(self.mat_factors.iter_mut()) {
            for v in t.iter_mut() {
                *v = T::from_f64(rng.random_range(-1.0..1.0) * factor_scale);
            }
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn resolution(&self) -> [usize; 3] {
        self.resolution
    }

    pub fn layout(&self) -> &RankLayout {
        &self.layout
    }

    pub fn n_vec(&self) -> usize {
        self.layout.n_vec()
    }

    pub fn n_mat(&self) -> usize {
        self.layout.n_mat()
    }

    pub fn rank(&self) -> usize {
        self.layout.rank()
    }

    /// Rewrites the group table; the totals must be unchanged.
    pub fn set_layout(&mut self, layout: RankLayout) -> Result<()> {
        if layout.total() != self.layout.total() {
            return Err(Error::Layout(format!(
                "new layout {} does not match component counts {}",
                layout.total(),
                self.layout.total()
            )));
        }
        self.layout = layout;
        Ok(())
    }

    /// `C × R` rank weights, row-major, columns `[vec | mat]`.
    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    /// Vector factor along `axis`, `res[axis] × n_vec`.
    pub fn vec_factor(&self, axis: usize) -> &[T] {
        &self.vec_factors[axis]
    }

    pub fn vec_factor_mut(&mut self, axis: usize) -> &mut [T] {
        &mut self.vec_factors[axis]
    }

    /// Matrix factor on `PLANES[plane]`, `res[a] × res[b] × n_mat`.
    pub fn mat_factor(&self, plane: usize) -> &[T] {
        &self.mat_factors[plane]
    }

    pub fn mat_factor_mut(&mut self, plane: usize) -> &mut [T] {
        &mut self.mat_factors[plane]
    }

    /// Every parameter tensor in canonical order: S, Ux, Uy, Uz, Uxy, Uyz, Uxz.
    pub fn tensors(&self) -> [&[T]; 7] {
        [
            &self.weights,
            &self.vec_factors[0],
            &self.vec_factors[1],
            &self.vec_factors[2],
            &self.mat_factors[0],
            &self.mat_factors[1],
            &self.mat_factors[2],
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 7] {
        let [vx, vy, vz] = &mut self.vec_factors;
        let [mxy, myz, mxz] = &mut self.mat_factors;
        [&mut self.weights, vx, vy, vz, mxy, myz, mxz]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Converts storage precision.
    pub fn cast<U: Real>(&self) -> DecomposedField<U> {
        let conv = |v: &Vec<T>| v.iter().map(|&x| U::from_f64(x.to_f64())).collect::<Vec<U>>();
        DecomposedField {
            channels: self.channels,
            resolution: self.resolution,
            layout: self.layout.clone(),
            weights: conv(&self.weights),
            vec_factors: std::array::from_fn(|a| conv(&self.vec_factors[a])),
            mat_factors: std::array::from_fn(|p| conv(&self.mat_factors[p])),
        }
    }

    #[inline]
    pub(crate) fn locate(&self, u: [T; 3]) -> Located<T> {
        debug_assert!(
            u.iter()
                .all(|&c| c >= T::from_f64(-1e-6) && c <= T::from_f64(1.0 + 1e-6)),
            "query coordinate outside [0,1]^3"
        );
        Located {
            axes: std::array::from_fn(|a| axis_lerp(u[a], self.resolution[a])),
        }
    }

    /// Samples every factor at `loc`.
    #[inline]
    pub(crate) fn sample_factors(&self, loc: &Located<T>, out: &mut FactorSamples<T>) {
        let nv = self.n_vec();
        if nv > 0 {
            for a in 0..3 {
                let AxisLerp { i0, w } = loc.axes[a];
                let f = &self.vec_factors[a];
                let r0 = &f[i0 * nv..(i0 + 1) * nv];
                let r1 = &f[(i0 + 1) * nv..(i0 + 2) * nv];
                for ((o, &x0), &x1) in out.vec[a].iter_mut().zip(r0).zip(r1) {
                    *o = x0 + w * (x1 - x0);
                }
            }
        }
        let nm = self.n_mat();
        if nm > 0 {
            for (p, &(a, b)) in PLANES.iter().enumerate() {
                let la = loc.axes[a];
                let lb = loc.axes[b];
                let nb = self.resolution[b];
                let f = &self.mat_factors[p];
                let base = |ia: usize, ib: usize| (ia * nb + ib) * nm;
                let r00 = &f[base(la.i0, lb.i0)..][..nm];
                let r10 = &f[base(la.i0 + 1, lb.i0)..][..nm];
                let r01 = &f[base(la.i0, lb.i0 + 1)..][..nm];
                let r11 = &f[base(la.i0 + 1, lb.i0 + 1)..][..nm];
                let (wa, wb) = (la.w, lb.w);
                for r in 0..nm {
                    let lo = r00[r] + wa * (r10[r] - r00[r]);
                    let hi = r01[r] + wa * (r11[r] - r01[r]);
                    out.mat[p][r] = lo + wb * (hi - lo);
                }
            }
        }
    }

    /// Per-rank products `[vec | mat]` from sampled factors.
    #[inline]
    pub(crate) fn products_from_samples(&self, s: &FactorSamples<T>, out: &mut [T]) {
        let nv = self.n_vec();
        let (pv, pm) = out.split_at_mut(nv);
        for r in 0..nv {
            pv[r] = s.vec[0][r] * s.vec[1][r] * s.vec[2][r];
        }
        for r in 0..self.n_mat() {
            pm[r] = s.mat[0][r] * s.mat[1][r] * s.mat[2][r];
        }
    }

    /// `channel` feature from precomputed products, honoring prefix limits.
    #[inline]
    pub(crate) fn channel_from_products(&self, channel: usize, products: &[T], keep: RankCount) -> T {
        let r = self.rank();
        let row = &self.weights[channel * r..(channel + 1) * r];
        let nv = self.n_vec();
        let mut acc = T::zero();
        for i in 0..keep.vec {
            acc += row[i] * products[i];
        }
        for i in 0..keep.mat {
            acc += row[nv + i] * products[nv + i];
        }
        acc
    }

    fn check_keep(&self, keep: Option<RankCount>) -> Result<RankCount> {
        let total = self.layout.total();
        match keep {
            None => Ok(total),
            Some(k) if k.fits_in(total) => Ok(k),
            Some(k) => Err(Error::Layout(format!("keep {k} exceeds layout {total}"))),
        }
    }

    /// Feature vector at normalized coordinate `u ∈ [0,1]³`.
    ///
    /// `keep` limits evaluation to the first `vec`/`mat` components.
    pub fn query_features(&self, u: [T; 3], keep: Option<RankCount>) -> Result<Vec<T>> {
        let keep = self.check_keep(keep)?;
        let loc = self.locate(u);
        let mut samples = FactorSamples::for_layout(&self.layout);
        let mut products = vec![T::zero(); self.rank()];
        self.sample_factors(&loc, &mut samples);
        self.products_from_samples(&samples, &mut products);
        Ok((0..self.channels)
            .map(|c| self.channel_from_products(c, &products, keep))
            .collect())
    }

    /// Dense `C × H × W × D` tensor evaluated exactly at the grid nodes.
    pub fn reconstruct_dense(&self) -> Result<Vec<T>> {
        let [h, w, d] = self.resolution;
        let requested = self.channels * h * w * d;
        if requested > DENSE_LIMIT {
            return Err(Error::TooLarge {
                requested,
                limit: DENSE_LIMIT,
            });
        }
        let (nv, nm, r_total) = (self.n_vec(), self.n_mat(), self.rank());
        let mut out = vec![T::zero(); requested];
        let mut prod = vec![T::zero(); r_total];
        for i in 0..h {
            for j in 0..w {
                for k in 0..d {
                    let node = [i, j, k];
                    for r in 0..nv {
                        prod[r] = (0..3)
                            .map(|a| self.vec_factors[a][node[a] * nv + r])
                            .fold(T::one(), |x, y| x * y);
                    }
                    for r in 0..nm {
                        prod[nv + r] = PLANES
                            .iter()
                            .enumerate()
                            .map(|(p, &(a, b))| {
                                let idx = (node[a] * self.resolution[b] + node[b]) * nm + r;
                                self.mat_factors[p][idx]
                            })
                            .fold(T::one(), |x, y| x * y);
                    }
                    for c in 0..self.channels {
                        let row = &self.weights[c * r_total..(c + 1) * r_total];
                        let v = row.iter().zip(&prod).fold(T::zero(), |acc, (&s, &p)| acc + s * p);
                        out[((c * h + i) * w + j) * d + k] = v;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Keeps a subset of rank components. Kept components retain their
    /// relative order and the group table is recomputed.
    pub fn truncate(&self, keep: &Keep) -> Result<Self> {
        let (vec_keep, mat_keep) = match keep {
            Keep::Prefix(k) => {
                self.check_keep(Some(*k))?;
                ((0..k.vec).collect::<Vec<_>>(), (0..k.mat).collect::<Vec<_>>())
            }
            Keep::Indices { vec, mat } => {
                let norm = |idx: &[usize], n: usize, kind: &str| -> Result<Vec<usize>> {
                    let mut v = idx.to_vec();
                    v.sort_unstable();
                    if v.windows(2).any(|w| w[0] == w[1]) {
                        return Err(Error::InvalidArgument(format!("duplicate {kind} index")));
                    }
                    if let Some(&bad) = v.iter().find(|&&i| i >= n) {
                        return Err(Error::InvalidArgument(format!(
                            "{kind} index {bad} out of range (have {n})"
                        )));
                    }
                    Ok(v)
                };
                (norm(vec, self.n_vec(), "vector")?, norm(mat, self.n_mat(), "matrix")?)
            }
        };
        if vec_keep.is_empty() && mat_keep.is_empty() {
            return Err(Error::InvalidArgument("truncation keeps no components".into()));
        }
        let layout = self.layout.regroup(&vec_keep, &mat_keep)?;
        Ok(self.gather(&vec_keep, &mat_keep, layout))
    }

    /// New field made of the listed components in the listed order.
    fn gather(&self, vec_idx: &[usize], mat_idx: &[usize], layout: RankLayout) -> Self {
        let (nv, nm, r_old) = (self.n_vec(), self.n_mat(), self.rank());
        let r_new = vec_idx.len() + mat_idx.len();
        let mut weights = Vec::with_capacity(self.channels * r_new);
        for c in 0..self.channels {
            let row = &self.weights[c * r_old..(c + 1) * r_old];
            weights.extend(vec_idx.iter().map(|&r| row[r]));
            weights.extend(mat_idx.iter().map(|&r| row[nv + r]));
        }
        let pick = |src: &[T], width: usize, idx: &[usize]| -> Vec<T> {
            if width == 0 {
                return Vec::new();
            }
            src.chunks_exact(width)
                .flat_map(|row| idx.iter().map(move |&r| row[r]))
                .collect()
        };
        Self {
            channels: self.channels,
            resolution: self.resolution,
            layout,
            weights,
            vec_factors: std::array::from_fn(|a| pick(&self.vec_factors[a], nv, vec_idx)),
            mat_factors: std::array::from_fn(|p| pick(&self.mat_factors[p], nm, mat_idx)),
        }
    }

    /// Concatenates the components of `other` after those of `self`.
    pub fn concat_ranks(&self, other: &Self) -> Result<Self> {
        if self.channels != other.channels {
            return Err(Error::Shape(format!(
                "channel mismatch: {} vs {}",
                self.channels, other.channels
            )));
        }
        if self.resolution != other.resolution {
            return Err(Error::Shape(format!(
                "resolution mismatch: {:?} vs {:?}",
                self.resolution, other.resolution
            )));
        }
        let (av, am, ar) = (self.n_vec(), self.n_mat(), self.rank());
        let (bv, bm, br) = (other.n_vec(), other.n_mat(), other.rank());
        let mut weights = Vec::with_capacity(self.channels * (ar + br));
        for c in 0..self.channels {
            let ra = &self.weights[c * ar..(c + 1) * ar];
            let rb = &other.weights[c * br..(c + 1) * br];
            weights.extend_from_slice(&ra[..av]);
            weights.extend_from_slice(&rb[..bv]);
            weights.extend_from_slice(&ra[av..]);
            weights.extend_from_slice(&rb[bv..]);
        }
        let interleave = |a: &[T], wa: usize, b: &[T], wb: usize, rows: usize| -> Vec<T> {
            let mut out = Vec::with_capacity(rows * (wa + wb));
            for i in 0..rows {
                out.extend_from_slice(&a[i * wa..(i + 1) * wa]);
                out.extend_from_slice(&b[i * wb..(i + 1) * wb]);
            }
            out
        };
        let res = self.resolution;
        Ok(Self {
            channels: self.channels,
            resolution: res,
            layout: self.layout.concat(&other.layout),
            weights,
            vec_factors: std::array::from_fn(|a| {
                interleave(&self.vec_factors[a], av, &other.vec_factors[a], bv, res[a])
            }),
            mat_factors: std::array::from_fn(|p| {
                let (a, b) = PLANES[p];
                interleave(&self.mat_factors[p], am, &other.mat_factors[p], bm, res[a] * res[b])
            }),
        })
    }

    /// Reorders components: new component `r` is old component `perm[r]`.
    /// The group table is left untouched.
    pub fn permute_ranks(&self, vec_perm: &[usize], mat_perm: &[usize]) -> Result<Self> {
        let check = |perm: &[usize], n: usize, kind: &str| -> Result<()> {
            let mut seen = vec![false; n];
            if perm.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{kind} permutation has length {}, expected {n}",
                    perm.len()
                )));
            }
            for &p in perm {
                if p >= n || std::mem::replace(&mut seen[p], true) {
                    return Err(Error::InvalidArgument(format!(
                        "{kind} permutation is not a bijection"
                    )));
                }
            }
            Ok(())
        };
        check(vec_perm, self.n_vec(), "vector")?;
        check(mat_perm, self.n_mat(), "matrix")?;
        Ok(self.gather(vec_perm, mat_perm, self.layout.clone()))
    }

    /// Resamples the factors onto a new grid, endpoint-aligned.
    pub fn upsample(&self, resolution: [usize; 3]) -> Result<Self> {
        self.resample(resolution, [(0.0, 1.0); 3])
    }

    /// Resamples onto a new grid whose node `u'` maps to old coordinate
    /// `offset + scale * u'` per axis (clamped to `[0,1]`).
    pub fn resample(&self, resolution: [usize; 3], map: [(f64, f64); 3]) -> Result<Self> {
        let mut out = Self::zeros(self.channels, resolution, self.layout.clone())?;
        out.weights = self.weights.clone();
        let old_u = |a: usize, i: usize| -> T {
            let u = i as f64 / (resolution[a] - 1) as f64;
            T::from_f64((map[a].0 + map[a].1 * u).clamp(0.0, 1.0))
        };
        let nv = self.n_vec();
        for a in 0..3 {
            for i in 0..resolution[a] {
                let l = axis_lerp(old_u(a, i), self.resolution[a]);
                let src = &self.vec_factors[a];
                for r in 0..nv {
                    let x0 = src[l.i0 * nv + r];
                    let x1 = src[(l.i0 + 1) * nv + r];
                    out.vec_factors[a][i * nv + r] = x0 + l.w * (x1 - x0);
                }
            }
        }
        let nm = self.n_mat();
        for (p, &(a, b)) in PLANES.iter().enumerate() {
            let nb_old = self.resolution[b];
            let src = &self.mat_factors[p];
            for i in 0..resolution[a] {
                let la = axis_lerp(old_u(a, i), self.resolution[a]);
                for j in 0..resolution[b] {
                    let lb = axis_lerp(old_u(b, j), self.resolution[b]);
                    let at = |ia: usize, ib: usize, r: usize| src[(ia * nb_old + ib) * nm + r];
                    for r in 0..nm {
                        let lo = at(la.i0, lb.i0, r) + la.w * (at(la.i0 + 1, lb.i0, r) - at(la.i0, lb.i0, r));
                        let hi = at(la.i0, lb.i0 + 1, r)
                            + la.w * (at(la.i0 + 1, lb.i0 + 1, r) - at(la.i0, lb.i0 + 1, r));
                        out.mat_factors[p][(i * resolution[b] + j) * nm + r] = lo + lb.w * (hi - lo);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Gradient buffers with the same shapes as a field's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldGrad<T: Real = f32> {
    pub weights: Vec<T>,
    pub vec: [Vec<T>; 3],
    pub mat: [Vec<T>; 3],
}

impl<T: Real> FieldGrad<T> {
    pub fn zeros_like(field: &DecomposedField<T>) -> Self {
        Self {
            weights: vec![T::zero(); field.weights.len()],
            vec: std::array::from_fn(|a| vec![T::zero(); field.vec_factors[a].len()]),
            mat: std::array::from_fn(|p| vec![T::zero(); field.mat_factors[p].len()]),
        }
    }

    pub fn tensors(&self) -> [&[T]; 7] {
        [
            &self.weights,
            &self.vec[0],
            &self.vec[1],
            &self.vec[2],
            &self.mat[0],
            &self.mat[1],
            &self.mat[2],
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 7] {
        let [vx, vy, vz] = &mut self.vec;
        let [mxy, myz, mxz] = &mut self.mat;
        [&mut self.weights, vx, vy, vz, mxy, myz, mxz]
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v = T::zero());
        }
    }
}

impl<T: Real> DecomposedField<T> {
    /// Accumulates factor gradients given `d loss / d product_r` at `loc`.
    /// `samples` must hold the factor samples at `loc`.
    #[inline]
    pub(crate) fn scatter_product_grads(
        &self,
        loc: &Located<T>,
        samples: &FactorSamples<T>,
        d_products: &[T],
        grad: &mut FieldGrad<T>,
    ) {
        let nv = self.n_vec();
        for a in 0..3 {
            if nv == 0 {
                break;
            }
            let (o1, o2) = ((a + 1) % 3, (a + 2) % 3);
            let AxisLerp { i0, w } = loc.axes[a];
            let one_minus = T::one() - w;
            let g = &mut grad.vec[a];
            let (lo, hi) = g[i0 * nv..(i0 + 2) * nv].split_at_mut(nv);
            for r in 0..nv {
                let d = d_products[r] * samples.vec[o1][r] * samples.vec[o2][r];
                lo[r] += one_minus * d;
                hi[r] += w * d;
            }
        }
        let nm = self.n_mat();
        if nm == 0 {
            return;
        }
        let dpm = &d_products[nv..];
        for (p, &(a, b)) in PLANES.iter().enumerate() {
            let (o1, o2) = ((p + 1) % 3, (p + 2) % 3);
            let la = loc.axes[a];
            let lb = loc.axes[b];
            let nb = self.resolution[b];
            let (wa, wb) = (la.w, lb.w);
            let w00 = (T::one() - wa) * (T::one() - wb);
            let w10 = wa * (T::one() - wb);
            let w01 = (T::one() - wa) * wb;
            let w11 = wa * wb;
            let g = &mut grad.mat[p];
            let base = |ia: usize, ib: usize| (ia * nb + ib) * nm;
            let (b00, b10, b01, b11) = (
                base(la.i0, lb.i0),
                base(la.i0 + 1, lb.i0),
                base(la.i0, lb.i0 + 1),
                base(la.i0 + 1, lb.i0 + 1),
            );
            for r in 0..nm {
                let d = dpm[r] * samples.mat[o1][r] * samples.mat[o2][r];
                g[b00 + r] += w00 * d;
                g[b10 + r] += w10 * d;
                g[b01 + r] += w01 * d;
                g[b11 + r] += w11 * d;
            }
        }
    }
}
