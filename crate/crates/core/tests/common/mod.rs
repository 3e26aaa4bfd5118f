//! Helpers shared by the integration tests.
#![allow(dead_code)]

use ccfield::field::{DecomposedField, RankCount, RankLayout};
use ccfield::shading::ShadingConfig;
use ccfield::{Aabb, FieldPair, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn layout(groups: &[(usize, usize)]) -> RankLayout {
    RankLayout::new(groups.iter().map(|&(v, m)| RankCount::new(v, m)).collect()).unwrap()
}

pub fn random_field<T: Real>(seed: u64, channels: usize, res: [usize; 3], groups: &[(usize, usize)]) -> DecomposedField<T> {
    let mut f = DecomposedField::zeros(channels, res, layout(groups)).unwrap();
    f.randomize(&mut rng(seed), 1.0, 1.0);
    f
}

pub fn random_point(rng: &mut impl Rng) -> [f64; 3] {
    std::array::from_fn(|_| rng.random::<f64>())
}

/// Small random model with visible density (the shift is zero).
pub fn random_model(seed: u64, res: usize, density: &[(usize, usize)], color: &[(usize, usize)], sh_degree: usize) -> FieldPair {
    let mut r = rng(seed);
    let shading = ShadingConfig::new(sh_degree, 0.0).unwrap();
    let mut m = FieldPair::zeros(Aabb::cube(1.0), [res; 3], layout(density), layout(color), shading).unwrap();
    m.density.randomize(&mut r, 1.0, 1.0);
    m.color.randomize(&mut r, 1.0, 1.0);
    m
}

/// Largest per-pixel channel difference.
pub fn max_pixel_diff(a: &ccfield::render::Image, b: &ccfield::render::Image) -> f64 {
    assert_eq!((a.width, a.height), (b.width, b.height));
    a.pixels
        .iter()
        .zip(&b.pixels)
        .flat_map(|(p, q)| (0..3).map(move |k| (p[k] as f64 - q[k] as f64).abs()))
        .fold(0.0, f64::max)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Model with a random shape: group tables, resolutions, SH degree and an
/// optional occupancy grid all vary with `r`.
pub fn random_layout_model(r: &mut impl Rng) -> FieldPair {
    use ccfield::render::OccupancyGrid;
    let mut groups = |max_groups: usize| -> Vec<(usize, usize)> {
        (0..r.random_range(1..=max_groups))
            .map(|_| loop {
                let g = (r.random_range(0..4), r.random_range(0..3));
                if g.0 + g.1 > 0 {
                    break g;
                }
            })
            .collect()
    };
    let (dg, cg) = (groups(2), groups(5));
    let degree = r.random_range(0..=3);
    let res: [usize; 3] = std::array::from_fn(|_| r.random_range(2..9));
    let lo: [f64; 3] = std::array::from_fn(|_| r.random_range(-2.0..0.0));
    let hi: [f64; 3] = std::array::from_fn(|a| lo[a] + r.random_range(0.5..3.0));
    let shading = ShadingConfig::new(degree, r.random_range(-12.0..0.0)).unwrap();
    let mut m = FieldPair::zeros(Aabb::new(lo, hi).unwrap(), res, layout(&dg), layout(&cg), shading).unwrap();
    let seed = r.random::<u64>();
    m.density.randomize(&mut rng(seed), 1.0, 1.0);
    m.color.randomize(&mut rng(seed + 1), 1.0, 1.0);
    if r.random_bool(0.5) {
        let ores: [usize; 3] = std::array::from_fn(|_| r.random_range(1..12));
        let phase = r.random::<f64>();
        m.occupancy = Some(OccupancyGrid::from_density_fn(ores, 0.5, r.random_range(0..2), move |u| {
            ((u[0] * 7.0 + u[1] * 3.0 + phase) * 5.0).sin()
        }));
    }
    m
}

/// File size written out from the format description: magic, version,
/// box, shading, two field headers with group tables, occupancy header,
/// f32 payload and packed occupancy bits.
pub fn expected_file_size(m: &FieldPair) -> u64 {
    let mut header = 4 + 2 + 6 * 8 + 1 + 8 + 1;
    let mut floats = 0;
    for f in [&m.density, &m.color] {
        header += 4 + 3 * 4 + 4 + 8 * f.layout().num_groups();
        let [h, w, d] = f.resolution();
        let (nv, nm) = (f.n_vec(), f.n_mat());
        floats += f.channels() * (nv + nm) + (h + w + d) * nv + (h * w + w * d + h * d) * nm;
    }
    let occ = m.occupancy.as_ref().map_or(0, |g| {
        let [a, b, c] = g.resolution();
        3 * 4 + 8 + 4 + (a * b * c).div_ceil(8)
    });
    (header + 4 * floats + occ) as u64
}
