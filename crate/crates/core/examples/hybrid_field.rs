// A hybrid field: vector (CP) and matrix (triple-plane) components sharing
// one weight matrix, queried, truncated to a prefix, and upsampled.

use ccfield::{DecomposedField, Keep, RankCount, RankLayout};
use rand::SeedableRng;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    // two rank groups: (4 vec, 1 mat) then (2 vec, 2 mat)
    let layout = RankLayout::new(vec![RankCount::new(4, 1), RankCount::new(2, 2)])?;
    let mut field = DecomposedField::<f64>::zeros(3, [8, 8, 8], layout)?;
    field.randomize(&mut rand_chacha::ChaCha8Rng::seed_from_u64(1), 1.0, 1.0);
    println!("rank {} ({} params), dividing ranks {:?}", field.rank(), field.parameter_count(), field.layout().dividing_ranks());

    let u = [0.3, 0.5, 0.9];
    let full = field.query_features(u, None)?;
    let first = field.query_features(u, Some(field.layout().prefix(1)))?;
    println!("query at {u:?}: full {full:.3?}, first group {first:.3?}");

    // truncation keeps the prefix bitwise
    let small = field.truncate(&Keep::Prefix(field.layout().prefix(1)))?;
    assert_eq!(small.query_features(u, None)?, first);

    // old nodes survive upsampling 8 -> 15 (every other new node)
    let fine = field.upsample([15, 15, 15])?;
    let node = [2.0 / 7.0, 3.0 / 7.0, 5.0 / 7.0];
    let a = field.query_features(node, None)?;
    let b = fine.query_features(node, None)?;
    let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("upsampled to {:?}; node drift {err:.1e}", fine.resolution());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("hybrid_field");
}
