// Trains a small multi-group model with the rank-residual loss and prints
// the per-group PSNR as training goes.

use ccfield::compress::truncate_color;
use ccfield::io::dataset::load_split;
use ccfield::io::synthetic::{generate_dataset, AnalyticScene, GenerateOptions};
use ccfield::render::{psnr, render_image};
use ccfield::train::{Preset, TrainConfig, Trainer};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut gen = GenerateOptions::new(8, 20, 20, 1);
    gen.gt_resolution = 0;
    generate_dataset(&AnalyticScene::three_primitives(), &gen, dir.path())?;
    let views = load_split(dir.path(), "train", [1.0; 3])?;

    let mut cfg = TrainConfig::preset(Preset::Desk).with_iterations(120);
    cfg.batch_size = 512;
    println!("color groups {:?}", cfg.color_layout.groups());
    let opts = cfg.render;
    let out = Trainer::new(&views, cfg)?.run_with(|_, r| {
        if (r.step + 1) % 40 == 0 {
            println!("step {:4} loss {:.5} batch PSNR per group {:.2?}", r.step + 1, r.loss, r.group_psnr);
        }
        true
    })?;

    // every prefix is a usable model on its own
    for rm in out.model.color.layout().dividing_ranks() {
        let m = truncate_color(&out.model, rm)?;
        let p = psnr(&render_image(&m, &views[0].camera, &opts), &views[0].image)?;
        println!("color rank {rm}: {p:.2} dB on view 0");
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("rank_residual_training");
}
