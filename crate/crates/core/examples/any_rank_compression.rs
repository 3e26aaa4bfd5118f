// Importance scores, truncation to an arbitrary rank, and fitting a byte
// budget.

use ccfield::compress::{compress_to_budget, rank_importance, size_at, sort_and_truncate};
use ccfield::io::serialized_size;
use ccfield::shading::ShadingConfig;
use ccfield::{Aabb, FieldPair, RankCount, RankLayout};
use rand::SeedableRng;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let color = RankLayout::new(vec![RankCount::new(4, 0), RankCount::new(0, 2), RankCount::new(2, 2)])?;
    let model = FieldPair::<f32>::init_random(Aabb::cube(1.0), [12; 3], RankLayout::single(4, 1)?, color, ShadingConfig::new(1, -10.0)?, &mut rng)?;

    let rep = rank_importance(&model.color);
    println!("vec scores {:.3?}", rep.vec_scores);
    println!("mat scores {:.3?}", rep.mat_scores);

    // target between dividing ranks: whole groups first, then the best of the next
    let t = RankCount::new(5, 1);
    let cut = sort_and_truncate(&model.color, t)?;
    println!("target {t}: kept layout {:?}", cut.layout().groups());

    for rm in model.color.layout().dividing_ranks() {
        println!("size at {rm}: {} bytes", size_at(&model, rm)?);
    }
    let budget = serialized_size(&model) * 3 / 4;
    let (small, kept) = compress_to_budget(&model, budget)?;
    println!("budget {budget}: kept {kept}, {} bytes", serialized_size(&small));
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("any_rank_compression");
}
