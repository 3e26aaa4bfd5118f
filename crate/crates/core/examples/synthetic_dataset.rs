// Generates a posed dataset from the analytic three-primitive scene and
// loads it back.

use ccfield::io::dataset::load_split;
use ccfield::io::synthetic::{generate_dataset, AnalyticScene, GenerateOptions};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut opts = GenerateOptions::new(8, 24, 24, 0);
    opts.gt_resolution = 16;
    generate_dataset(&AnalyticScene::three_primitives(), &opts, dir.path())?;
    for entry in std::fs::read_dir(dir.path())? {
        let entry = entry?;
        println!("  {}", entry.file_name().to_string_lossy());
    }
    let train = load_split(dir.path(), "train", [1.0; 3])?;
    let test = load_split(dir.path(), "test", [1.0; 3])?;
    println!("{} train and {} test views, first at {:?}", train.len(), test.len(), train[0].camera.origin());
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("synthetic_dataset");
}
