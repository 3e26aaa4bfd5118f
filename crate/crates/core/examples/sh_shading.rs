// Real spherical harmonics and the density/color decoding of raw features.

use ccfield::shading::{decode, eval_sh_basis, ShadingConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let d = [0.0, 0.6, 0.8];
    let y = eval_sh_basis(d, 2)?;
    println!("degree-2 basis at {d:?}: {y:.4?}");

    let cfg = ShadingConfig::new(2, -10.0)?;
    let mut coeffs = vec![0.0; cfg.color_channels()];
    // red gets a constant term, blue a term along +z
    coeffs[0] = 3.0;
    coeffs[2 * cfg.basis_len() + 2] = 4.0;
    for dir in [[0.0, 0.0, 1.0], [0.0, 0.0, -1.0], [1.0, 0.0, 0.0]] {
        let (sigma, rgb) = decode(12.0, &coeffs, dir, &cfg)?;
        println!("dir {dir:?}: sigma {sigma:.3}, rgb {rgb:.3?}");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("sh_shading");
}
