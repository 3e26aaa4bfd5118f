// Analytic gradients of the rank-residual loss against central finite
// differences in double precision.

use ccfield::train::{gradcheck, GradcheckSetup, GradientRouting};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    for routing in [GradientRouting::Cumulative, GradientRouting::OwnGroup] {
        let setup = GradcheckSetup { routing, rays: 8, ..GradcheckSetup::desk() };
        let rep = gradcheck(&setup)?;
        println!("{routing:?}: {} entries, max relative error {:.2e}", rep.checked, rep.max_rel_error);
        for (name, e) in &rep.per_tensor {
            println!("  {name:>10} {e:.2e}");
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("gradient_check");
}
