// Saves a model with an occupancy grid, checks the size formula and reads it
// back byte for byte.

use ccfield::io::model_file::{from_bytes, serialized_size, to_bytes};
use ccfield::render::OccupancyGrid;
use ccfield::shading::ShadingConfig;
use ccfield::{Aabb, FieldPair, RankCount, RankLayout};
use rand::SeedableRng;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
    let color = RankLayout::new(vec![RankCount::new(3, 1), RankCount::new(1, 2)])?;
    let mut m = FieldPair::init_random(Aabb::new([-1.0, -0.5, -0.5], [1.0, 0.5, 0.5])?, [10, 6, 6], RankLayout::single(2, 1)?, color, ShadingConfig::new(2, -10.0)?, &mut rng)?;
    m.occupancy = Some(OccupancyGrid::from_density_fn([6, 4, 4], 0.5, 1, |u| if u[2] < 0.3 { 1.0 } else { 0.0 }));

    let bytes = to_bytes(&m);
    println!("{} parameters, {} bytes (formula {})", m.parameter_count(), bytes.len(), serialized_size(&m));
    let back = from_bytes(&bytes)?;
    assert_eq!(to_bytes(&back), bytes);
    println!("round trip is byte-identical");

    let mut bad = bytes.clone();
    bad.truncate(bad.len() - 1);
    println!("truncated file: {}", from_bytes(&bad).unwrap_err());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("model_file_format");
}
