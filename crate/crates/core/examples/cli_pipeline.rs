// The command line driven in-process: data, training, compression, eval.

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (data, model, small) = (p("data"), p("m.ccnf"), p("small.ccnf"));
    let steps: [&[&str]; 5] = [
        &["gen-data", "--scene-spec", "builtin:three-primitives", "--views", "6", "--res", "16x16", "--gt-res", "0", "--out", &data],
        &["train", "--data", &data, "--preset", "desk", "--iters", "30", "--batch", "256", "--workers", "2", "--out", &model],
        &["compress", "--model", &model, "--vec", "16", "--mat", "0", "--out", &small],
        &["eval", "--model", &small, "--data", &data],
        &["info", &small],
    ];
    for args in steps {
        println!("$ ccfield {}", args[0]);
        let code = ccfield::cli::run_from(std::iter::once("ccfield").chain(args.iter().copied()), &mut std::io::stdout());
        if code != 0 {
            return Err(format!("{} exited with {code}", args[0]).into());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() {
    run_example().expect("cli_pipeline");
}
