use std::path::Path;
use std::process::{Command, Output};

fn ccfield(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccfield"))
        .args(args)
        .env("CCFIELD_THREADS", "2")
        .output()
        .expect("spawn ccfield")
}

fn ok(args: &[&str]) -> String {
    let o = ccfield(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn every_verb_has_help() {
    for verb in ["gen-data", "train", "render", "compress", "compose", "eval", "info", "gradcheck"] {
        let o = ccfield(&[verb, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{verb}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"), "{verb}");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(ccfield(&[]).status.code(), Some(2));
    assert_eq!(ccfield(&["compress", "--model", "m.ccnf", "--vec", "2", "--out", "o"]).status.code(), Some(2));
    assert_eq!(ccfield(&["gen-data", "--scene-spec", "x", "--res", "12", "--out", "o"]).status.code(), Some(2));
    let o = ccfield(&["info", "/definitely/missing.ccnf"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
}

#[test]
fn pipeline_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["gen-data", "--scene-spec", "builtin:three-primitives", "--views", "6", "--test-views", "2", "--res", "16x16", "--gt-res", "0", "--seed", "3", "--out", s(&data)]);
    assert!(data.join("transforms_train.json").exists() && data.join("transforms_test.json").exists());

    let train = |name: &str| {
        let out = d.join(name);
        ok(&["train", "--data", s(&data), "--preset", "desk", "--iters", "40", "--batch", "256", "--seed", "1", "--out", s(&out)]);
        out
    };
    let (a, b) = (train("a.ccnf"), train("b.ccnf"));
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a.with_extension("loss.csv")), read(&b.with_extension("loss.csv")));

    let info = ok(&["info", s(&a)]);
    let bytes = std::fs::metadata(&a).unwrap().len();
    assert!(info.contains(&format!("size: {bytes} bytes")), "{info}");

    let eval = |m: &Path| ok(&["eval", "--model", s(m), "--data", s(&data)]);
    let e = eval(&a);
    assert_eq!(e, eval(&a));
    assert_eq!(e.lines().count(), 3);
    assert!(e.lines().last().unwrap().starts_with("mean\t"));

    let (r1, r2) = (d.join("r1"), d.join("r2"));
    for r in [&r1, &r2] {
        ok(&["render", "--model", s(&a), "--orbit", "2", "--res", "12x10", "--alpha", "--out", s(r)]);
    }
    for f in ["r_0.png", "r_1.png", "r_1_rgba.png"] {
        assert_eq!(read(&r1.join(f)), read(&r2.join(f)), "{f}");
    }

    // smallest dividing rank of the desk color layout
    let c = d.join("c.ccnf");
    let report = d.join("report.csv");
    ok(&["compress", "--model", s(&a), "--vec", "16", "--mat", "0", "--out", s(&c), "--report", s(&report)]);
    assert!(std::fs::metadata(&c).unwrap().len() < bytes);
    let kept = std::fs::read_to_string(&report).unwrap().lines().skip(1).filter(|l| l.ends_with(",1")).count();
    assert_eq!(kept, 16);
    let o = ccfield(&["compress", "--model", s(&a), "--budget", "10", "--out", s(&d.join("tiny.ccnf"))]);
    assert_eq!(o.status.code(), Some(1));

    let scene = d.join("scene.json");
    std::fs::write(
        &scene,
        format!(
            r#"{{"objects": [{{"model": "{}", "translation": [-0.6, 0, 0]}},
                {{"model": "{}", "translation": [0.6, 0, 0], "lod": {{"vec": 16, "mat": 0}}}}]}}"#,
            s(&a),
            s(&a)
        ),
    )
    .unwrap();
    let compose = |out: &Path| ok(&["compose", "--scene", s(&scene), "--orbit", "2", "--res", "12x12", "--out", s(out)]);
    let first = compose(&d.join("s1"));
    compose(&d.join("s2"));
    assert!(first.contains("2 objects"), "{first}");
    assert_eq!(read(&d.join("s1/r_0.png")), read(&d.join("s2/r_0.png")));
    assert!(ok(&["info", s(&scene)]).contains("lod"));
}

#[test]
fn gradcheck_verb_passes() {
    let out = ok(&["gradcheck", "--residual", "detach"]);
    assert!(out.contains("max relative error"), "{out}");
}
