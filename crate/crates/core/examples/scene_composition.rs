// Places two objects in one scene with rigid transforms, lowers the level of
// detail of one of them, and renders the result.

use std::sync::Arc;

use ccfield::compose::{AffineTransform, Scene};
use ccfield::io::synthetic::orbit_camera_at;
use ccfield::render::{render_image, RenderOptions};
use ccfield::shading::ShadingConfig;
use ccfield::{Aabb, FieldPair, RankCount, RankLayout};
use rand::SeedableRng;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
    let color = RankLayout::new(vec![RankCount::new(2, 0), RankCount::new(2, 2)])?;
    let mut obj = FieldPair::init_random(Aabb::cube(0.5), [8; 3], RankLayout::single(2, 1)?, color, ShadingConfig::new(1, 0.0)?, &mut rng)?;
    // solid density (softplus(4) inside the box) and visibly varied color
    for a in 0..3 {
        obj.density.vec_factor_mut(a).fill(1.0);
        obj.density.mat_factor_mut(a).fill(0.0);
    }
    obj.density.weights_mut().copy_from_slice(&[2.0, 2.0, 0.0]);
    obj.color.randomize(&mut rng, 1.0, 1.0);
    let obj = Arc::new(obj);

    let mut scene = Scene::new([1.0; 3]);
    scene.add_instance(Arc::clone(&obj), AffineTransform::translation([-0.7, 0.0, 0.0]), None)?;
    let b = scene.add_instance(obj, AffineTransform::rigid([0.0, 0.0, 1.0], 0.8, [0.7, 0.0, 0.0])?, None)?;
    println!("full: {} bytes, ranks {:?}", scene.serialized_bytes(), scene.total_ranks());

    let cam = orbit_camera_at(24, 16, 0.2, 0.3, 4.0)?;
    let opts = scene.options(&RenderOptions::default());
    let full = render_image(&scene, &cam, &opts);

    scene.set_lod(b, Some(RankCount::new(2, 0)))?;
    println!("lod:  {} bytes, ranks {:?}", scene.serialized_bytes(), scene.total_ranks());
    let lod = render_image(&scene, &cam, &opts);
    println!("PSNR full vs lod {:.2} dB", ccfield::render::psnr(&full, &lod)?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("scene_composition");
}
