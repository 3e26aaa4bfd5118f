// Volume rendering of a homogeneous cube, checked against Beer-Lambert,
// and empty-space skipping with an occupancy grid.

use ccfield::render::{march_ray, render_alpha, OccupancyGrid, Ray, RenderOptions};
use ccfield::shading::ShadingConfig;
use ccfield::{Aabb, FieldPair, RankLayout};
use ccfield::io::synthetic::orbit_camera_at;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    // one vec component equal to 1 everywhere; sigma = softplus(w + shift)
    let shading = ShadingConfig::new(0, 0.0)?;
    let mut m = FieldPair::<f32>::zeros(Aabb::cube(1.0), [4; 3], RankLayout::single(1, 0)?, RankLayout::single(1, 0)?, shading)?;
    for a in 0..3 {
        m.density.vec_factor_mut(a).fill(1.0);
        m.color.vec_factor_mut(a).fill(1.0);
    }
    let target_sigma: f64 = 0.5;
    // inverse softplus
    m.density.weights_mut()[0] = target_sigma.exp_m1().ln() as f32;

    let opts = RenderOptions::default();
    let ray = Ray::new([-3.0, 0.0, 0.0], [1.0, 0.0, 0.0])?;
    let r = march_ray(&m, &ray, &opts);
    let want = 1.0 - (-target_sigma * 2.0).exp();
    println!("alpha through the cube {:.5}, Beer-Lambert {want:.5}", r.alpha);

    // occupied only where x < 0: rays see half the thickness
    m.occupancy = Some(OccupancyGrid::from_density_fn([8; 3], 0.5, 0, |u| if u[0] < 0.5 { 1.0 } else { 0.0 }));
    let half = march_ray(&m, &ray, &opts).alpha;
    println!("with half the grid occupied {half:.5}, expected {:.5}", 1.0 - (-target_sigma).exp());

    let cam = orbit_camera_at(16, 16, 0.3, 0.4, 4.0)?;
    let alpha = render_alpha(&m, &cam, &opts);
    println!("16x16 alpha mean {:.3}", alpha.iter().sum::<f32>() / alpha.len() as f32);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("volume_render");
}
