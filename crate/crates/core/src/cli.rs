//! The `ccfield` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::compose::Scene;
use crate::compress::{compress_to_budget, rank_importance, truncate_color, truncation_plan};
use crate::error::{Error, Result};
use crate::field::{DecomposedField, Keep, RankCount};
use crate::io::dataset::{load_split, TransformsFile};
use crate::io::model_file::{load_model, save_model, serialized_size};
use crate::io::scene_file::{load_scene, SceneFile};
use crate::io::synthetic::{generate_dataset, ring_cameras_at, save_rgba_png, AnalyticScene, GenerateOptions, ORBIT_RADIUS};
use crate::model::FieldPair;
use crate::render::{psnr, render_alpha, render_image, Camera, Image, RenderOptions, Renderable};
use crate::train::{gradcheck, write_loss_csv, GradcheckSetup, GradientRouting, Preset, ResidualMode, TrainConfig, Trainer};

/// Built-in analytic scene name accepted by `gen-data --scene-spec`.
pub const BUILTIN_SCENE: &str = "builtin:three-primitives";

#[derive(Debug, Parser)]
#[command(name = "ccfield", version, about = "Train, compress and compose rank-decomposed radiance fields")]
pub struct Cli {
    /// Worker threads (default: CCFIELD_THREADS, else all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a posed dataset of an analytic scene.
    GenData(GenData),
    /// Fit a model to a dataset.
    Train(Train),
    /// Render a model or scene from a pose file or an orbit.
    Render(Render),
    /// Truncate a model's color components to a rank target or byte budget.
    Compress(Compress),
    /// Render a composed scene.
    Compose(Compose),
    /// PSNR of a model or scene against a dataset split.
    Eval(Eval),
    /// Describe a model or scene file.
    Info(Info),
    /// Compare analytic gradients with finite differences.
    Gradcheck(Gradcheck),
}

#[derive(Debug, Args)]
pub struct GenData {
    /// Analytic scene JSON, or `builtin:three-primitives`.
    #[arg(long)]
    pub scene_spec: String,
    #[arg(long, default_value_t = 40)]
    pub views: usize,
    /// Test views (default: a quarter of --views).
    #[arg(long)]
    pub test_views: Option<usize>,
    #[arg(long, default_value = "128x128", value_parser = parse_res)]
    pub res: (u32, u32),
    /// Per-axis resolution of the dense ground-truth dump (0 skips it).
    #[arg(long, default_value_t = 64)]
    pub gt_res: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PresetArg {
    Cp,
    Hy,
    HyS,
    Desk,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Cp => Preset::Cp,
            PresetArg::Hy => Preset::Hy,
            PresetArg::HyS => Preset::HyS,
            PresetArg::Desk => Preset::Desk,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ResidualArg {
    Nodetach,
    Detach,
    Sequential,
}

impl From<ResidualArg> for ResidualMode {
    fn from(r: ResidualArg) -> Self {
        match r {
            ResidualArg::Nodetach => ResidualMode::ParallelNoDetach,
            ResidualArg::Detach => ResidualMode::ParallelDetach,
            ResidualArg::Sequential => ResidualMode::Sequential,
        }
    }
}

#[derive(Debug, Args)]
pub struct Train {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub preset: PresetArg,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep at most this many rank groups; 1 trains with the plain loss.
    #[arg(long)]
    pub groups: Option<usize>,
    /// Iterations; schedules are rescaled to match.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, value_enum, default_value = "nodetach")]
    pub residual: ResidualArg,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Total learning-rate decay over the run (1 keeps it constant).
    #[arg(long)]
    pub lr_decay: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Gradient accumulators; results depend on this, not on --threads.
    #[arg(long, default_value_t = 8)]
    pub workers: usize,
    /// Loss curve CSV (default: next to --out).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    /// Also save the Adam moments here.
    #[arg(long)]
    pub optimizer_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[group(id = "source", required = true, multiple = false)]
pub struct Source {
    #[arg(long, group = "source")]
    pub model: Option<PathBuf>,
    #[arg(long, group = "source")]
    pub scene: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Views {
    /// transforms_*.json whose frames are rendered.
    #[arg(long, conflicts_with = "orbit")]
    pub pose_file: Option<PathBuf>,
    /// Number of cameras on a ring around the origin.
    #[arg(long)]
    pub orbit: Option<usize>,
    #[arg(long, default_value_t = 30.0)]
    pub elevation: f64,
    #[arg(long, default_value_t = ORBIT_RADIUS)]
    pub radius: f64,
    #[arg(long, default_value = "128x128", value_parser = parse_res)]
    pub res: (u32, u32),
}

#[derive(Debug, Args)]
pub struct Render {
    #[command(flatten)]
    pub source: Source,
    #[command(flatten)]
    pub views: Views,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write straight-alpha RGBA images.
    #[arg(long)]
    pub alpha: bool,
}

#[derive(Debug, Args)]
pub struct Compress {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, requires = "mat", conflicts_with = "budget")]
    pub vec: Option<usize>,
    #[arg(long, requires = "vec", conflicts_with = "budget")]
    pub mat: Option<usize>,
    #[arg(long, required_unless_present = "vec")]
    pub budget: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-component importance and kept flag as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Compose {
    #[arg(long)]
    pub scene: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub orbit: usize,
    #[arg(long, default_value_t = 30.0)]
    pub elevation: f64,
    #[arg(long, default_value_t = ORBIT_RADIUS)]
    pub radius: f64,
    #[arg(long, default_value = "128x128", value_parser = parse_res)]
    pub res: (u32, u32),
}

#[derive(Debug, Args)]
pub struct Eval {
    #[command(flatten)]
    pub source: Source,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Save the renders here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Info {
    /// Model (.ccnf) or scene (.json) file.
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct Gradcheck {
    #[arg(long, value_enum, default_value = "desk")]
    pub preset: GradcheckPreset,
    #[arg(long, value_enum, default_value = "nodetach")]
    pub residual: ResidualArg,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum GradcheckPreset {
    Desk,
}

fn parse_res(s: &str) -> std::result::Result<(u32, u32), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: u32 = w.trim().parse().map_err(|e| format!("width: {e}"))?;
    let h: u32 = h.trim().parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("resolution must be positive".into());
    }
    Ok((w, h))
}

/// Parses `args` (including the program name), runs the verb and returns
/// the process exit code. Reports go to `out`, diagnostics to stderr.
pub fn run_from<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let n = match threads {
        Some(n) => Some(n),
        None => match std::env::var("CCFIELD_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| Error::InvalidArgument(format!("CCFIELD_THREADS={v:?} is not a number")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(Error::InvalidArgument("thread count must be positive".into()));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train(a, out),
        Command::Render(a) => render(a, out),
        Command::Compress(a) => compress(a, out),
        Command::Compose(a) => compose(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Info(a) => info(&a.file, out),
        Command::Gradcheck(a) => run_gradcheck(a, out),
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<output>", e)
}

fn gen_data(a: GenData, out: &mut dyn Write) -> Result<()> {
    let scene = if a.scene_spec == BUILTIN_SCENE {
        AnalyticScene::three_primitives()
    } else {
        AnalyticScene::load(&a.scene_spec)?
    };
    let mut opts = GenerateOptions::new(a.views, a.res.0, a.res.1, a.seed);
    if let Some(t) = a.test_views {
        opts.test_views = t;
    }
    opts.gt_resolution = a.gt_res;
    generate_dataset(&scene, &opts, &a.out)?;
    writeln!(
        out,
        "wrote {} train and {} test views ({}x{}) to {}",
        opts.train_views,
        opts.test_views,
        a.res.0,
        a.res.1,
        a.out.display()
    )
    .map_err(io_err)
}

fn train(a: Train, out: &mut dyn Write) -> Result<()> {
    let mut cfg = TrainConfig::preset(a.preset.into());
    if let Some(k) = a.iters {
        cfg = cfg.with_iterations(k);
    }
    if let Some(m) = a.groups {
        cfg = cfg.with_groups(m)?;
    }
    if let Some(b) = a.batch {
        cfg.batch_size = b;
    }
    if let Some(d) = a.lr_decay {
        cfg.lr_decay = d;
    }
    cfg.residual = a.residual.into();
    cfg.seed = a.seed;
    cfg.workers = a.workers;
    cfg.render.background = [1.0; 3];
    let views = load_split(&a.data, "train", cfg.render.background)?;
    let iterations = cfg.iterations;
    let trainer = Trainer::new(&views, cfg)?;
    let output = trainer.run_with(|_, r| {
        if (r.step + 1) % 100 == 0 || r.step + 1 == iterations {
            log::info!("step {} loss {:.6} psnr {:?}", r.step + 1, r.loss, r.group_psnr);
        }
        true
    })?;
    save_model(&output.model, &a.out)?;
    let csv = a.loss_csv.unwrap_or_else(|| a.out.with_extension("loss.csv"));
    write_loss_csv(&output.records, &csv)?;
    if let Some(p) = &a.optimizer_out {
        output.optimizer.save(p)?;
    }
    let last = output.records.last();
    writeln!(
        out,
        "trained {} steps; final batch PSNR {}; wrote {} ({} bytes)",
        output.records.len(),
        last.map_or("n/a".into(), |r| r.group_psnr.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join("/")),
        a.out.display(),
        serialized_size(&output.model)
    )
    .map_err(io_err)
}

enum Loaded {
    Model(FieldPair),
    Scene(Scene),
}

impl Loaded {
    fn open(src: &Source) -> Result<Self> {
        match (&src.model, &src.scene) {
            (Some(m), _) => Ok(Loaded::Model(load_model(m)?)),
            (_, Some(s)) => Ok(Loaded::Scene(load_scene(s)?)),
            _ => Err(Error::InvalidArgument("need --model or --scene".into())),
        }
    }

    fn renderable(&self) -> &dyn Renderable {
        match self {
            Loaded::Model(m) => m,
            Loaded::Scene(s) => s,
        }
    }

    fn options(&self) -> RenderOptions {
        match self {
            Loaded::Model(_) => RenderOptions::default(),
            Loaded::Scene(s) => s.options(&RenderOptions::default()),
        }
    }
}

fn cameras(v: &Views) -> Result<Vec<(String, Camera)>> {
    let (w, h) = v.res;
    if let Some(p) = &v.pose_file {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let tf: TransformsFile = serde_json::from_str(&text)?;
        return tf
            .frames
            .iter()
            .enumerate()
            .map(|(i, fr)| {
                let m = nalgebra::Matrix4::from_fn(|r, c| fr.transform_matrix[r][c]);
                let cam = Camera::from_fov(w, h, tf.camera_angle_x, m).map_err(|e| Error::Dataset {
                    frame: fr.file_path.clone(),
                    reason: e.to_string(),
                })?;
                Ok((format!("r_{i}"), cam))
            })
            .collect();
    }
    let n = v.orbit.unwrap_or(8);
    Ok(ring_cameras_at(n, w, h, v.elevation, v.radius)?
        .into_iter()
        .enumerate()
        .map(|(i, c)| (format!("r_{i}"), c))
        .collect())
}

fn render_all(
    target: &dyn Renderable,
    opts: &RenderOptions,
    cams: &[(String, Camera)],
    dir: &Path,
    with_alpha: bool,
    out: &mut dyn Write,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, cam) in cams {
        let img = render_image(target, cam, opts);
        img.save_png(dir.join(format!("{name}.png")))?;
        if with_alpha {
            let alpha = render_alpha(target, cam, opts);
            save_rgba_png(&dir.join(format!("{name}_rgba.png")), &img, &alpha, opts.background)?;
        }
    }
    writeln!(out, "rendered {} views to {}", cams.len(), dir.display()).map_err(io_err)
}

fn render(a: Render, out: &mut dyn Write) -> Result<()> {
    let loaded = Loaded::open(&a.source)?;
    let cams = cameras(&a.views)?;
    render_all(loaded.renderable(), &loaded.options(), &cams, &a.out, a.alpha, out)
}

fn compose(a: Compose, out: &mut dyn Write) -> Result<()> {
    let scene = load_scene(&a.scene)?;
    let (d, c) = scene.total_ranks();
    writeln!(
        out,
        "scene: {} objects, density ranks {d}, color ranks {c}, {} bytes",
        scene.instances().len(),
        scene.serialized_bytes()
    )
    .map_err(io_err)?;
    let views = Views {
        pose_file: None,
        orbit: Some(a.orbit),
        elevation: a.elevation,
        radius: a.radius,
        res: a.res,
    };
    render_all(&scene, &scene.options(&RenderOptions::default()), &cameras(&views)?, &a.out, false, out)
}

fn compress(a: Compress, out: &mut dyn Write) -> Result<()> {
    let model = load_model(&a.model)?;
    let before = serialized_size(&model);
    let (compressed, target) = match (a.vec, a.mat, a.budget) {
        (Some(v), Some(m), _) => {
            let t = RankCount::new(v, m);
            (truncate_color(&model, t)?, t)
        }
        (_, _, Some(b)) => compress_to_budget(&model, b)?,
        _ => return Err(Error::InvalidArgument("need --vec and --mat, or --budget".into())),
    };
    if let Some(p) = &a.report {
        write_compress_report(&model.color, target, p)?;
    }
    save_model(&compressed, &a.out)?;
    writeln!(
        out,
        "color {} -> {} (groups {} -> {}); {before} -> {} bytes",
        model.color.layout().total(),
        compressed.color.layout().total(),
        layout_str(&model.color),
        layout_str(&compressed.color),
        serialized_size(&compressed)
    )
    .map_err(io_err)
}

fn write_compress_report(field: &DecomposedField, target: RankCount, path: &Path) -> Result<()> {
    let rep = rank_importance(field);
    let (kv, km) = match truncation_plan(field, target)? {
        Keep::Prefix(k) => ((0..k.vec).collect::<Vec<_>>(), (0..k.mat).collect::<Vec<_>>()),
        Keep::Indices { vec, mat } => (vec, mat),
    };
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kind", "index", "group", "importance", "kept"])?;
    for (kind, scores, groups, kept) in [
        ("vec", &rep.vec_scores, &rep.vec_groups, &kv),
        ("mat", &rep.mat_scores, &rep.mat_groups, &km),
    ] {
        for (i, s) in scores.iter().enumerate() {
            w.write_record([
                kind.to_string(),
                i.to_string(),
                groups[i].to_string(),
                format!("{s:.9e}"),
                (kept.contains(&i) as u8).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn eval(a: Eval, out: &mut dyn Write) -> Result<()> {
    let loaded = Loaded::open(&a.source)?;
    let opts = loaded.options();
    let views = load_split(&a.data, &a.split, opts.background)?;
    if views.is_empty() {
        return Err(Error::InvalidArgument(format!("split {:?} has no frames", a.split)));
    }
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut total = 0.0;
    for (i, v) in views.iter().enumerate() {
        let img: Image = render_image(loaded.renderable(), &v.camera, &opts);
        let p = psnr(&img, &v.image)?;
        total += p;
        writeln!(out, "{}\t{p:.2}", v.name).map_err(io_err)?;
        if let Some(dir) = &a.out {
            img.save_png(dir.join(format!("r_{i}.png")))?;
        }
    }
    writeln!(out, "mean\t{:.2}", total / views.len() as f64).map_err(io_err)
}

fn layout_str<T: crate::Real>(f: &DecomposedField<T>) -> String {
    f.layout().groups().iter().map(|g| g.to_string()).collect::<Vec<_>>().join(" ")
}

fn describe_model(model: &FieldPair, out: &mut dyn Write) -> std::io::Result<()> {
    let b = &model.aabb;
    writeln!(out, "aabb: {:?} .. {:?}", b.min, b.max)?;
    writeln!(out, "shading: SH degree {}, density shift {}", model.shading.sh_degree, model.shading.density_shift)?;
    for (name, f) in [("density", &model.density), ("color", &model.color)] {
        let d = f.layout().dividing_ranks().iter().map(|r| r.to_string()).collect::<Vec<_>>().join(", ");
        writeln!(
            out,
            "{name}: {} channels, grid {:?}, total {}, groups [{}], dividing ranks [{d}]",
            f.channels(),
            f.resolution(),
            f.layout().total(),
            layout_str(f)
        )?;
    }
    match &model.occupancy {
        Some(g) => writeln!(out, "occupancy: {:?}, {} of {} cells", g.resolution(), g.occupied_count(), g.cell_count())?,
        None => writeln!(out, "occupancy: none")?,
    }
    writeln!(out, "parameters: {}", model.parameter_count())?;
    writeln!(out, "size: {} bytes", serialized_size(model))?;
    for (name, f) in [("density", &model.density), ("color", &model.color)] {
        let rep = rank_importance(f);
        writeln!(out, "{name} importance (kind index group score):")?;
        for (kind, scores, groups) in [("vec", &rep.vec_scores, &rep.vec_groups), ("mat", &rep.mat_scores, &rep.mat_groups)] {
            for (i, s) in scores.iter().enumerate() {
                writeln!(out, "  {kind} {i} {} {s:.4e}", groups[i])?;
            }
        }
    }
    Ok(())
}

fn info(path: &Path, out: &mut dyn Write) -> Result<()> {
    let head = {
        use std::io::Read;
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut buf = [0u8; 4];
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        buf[..n].to_vec()
    };
    if head == crate::io::model_file::MAGIC {
        let model = load_model(path)?;
        let on_disk = std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len();
        writeln!(out, "model: {} ({on_disk} bytes on disk)", path.display()).map_err(io_err)?;
        return describe_model(&model, out).map_err(io_err);
    }
    let file = SceneFile::read(path)?;
    let scene = load_scene(path)?;
    let (d, c) = scene.total_ranks();
    writeln!(out, "scene: {} ({} objects)", path.display(), scene.instances().len()).map_err(io_err)?;
    for (o, inst) in file.objects.iter().zip(scene.instances()) {
        let (od, oc) = inst.ranks();
        writeln!(
            out,
            "  {}: density {od}, color {oc}{}, {} bytes, translation {:?}",
            o.model.display(),
            inst.lod.map_or(String::new(), |l| format!(" (lod {l})")),
            serialized_size(&inst.model),
            o.translation
        )
        .map_err(io_err)?;
    }
    writeln!(out, "total ranks: density {d}, color {c}").map_err(io_err)?;
    writeln!(out, "total size: {} bytes", scene.serialized_bytes()).map_err(io_err)
}

fn run_gradcheck(a: Gradcheck, out: &mut dyn Write) -> Result<()> {
    let GradcheckPreset::Desk = a.preset;
    let mut setup = GradcheckSetup::desk();
    setup.seed = a.seed;
    setup.routing = match ResidualMode::from(a.residual) {
        ResidualMode::ParallelNoDetach => GradientRouting::Cumulative,
        _ => GradientRouting::OwnGroup,
    };
    let t = std::time::Instant::now();
    let rep = gradcheck(&setup)?;
    for (name, e) in &rep.per_tensor {
        writeln!(out, "{name:>12}  max rel err {e:.3e}").map_err(io_err)?;
    }
    writeln!(
        out,
        "checked {} entries in {:.1?}; max relative error {:.3e} at {}[{}]",
        rep.checked,
        t.elapsed(),
        rep.max_rel_error,
        rep.worst.0,
        rep.worst.1
    )
    .map_err(io_err)?;
    if rep.max_rel_error < a.tolerance {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "gradient check failed: {:.3e} ≥ {:.0e}",
            rep.max_rel_error, a.tolerance
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_args(args: &[&str]) -> (i32, String) {
        let mut buf = Vec::new();
        let code = run_from(std::iter::once("ccfield").chain(args.iter().copied()), &mut buf);
        (code, String::from_utf8(buf).unwrap())
    }

    #[test]
    fn unknown_verb_is_usage_error() {
        assert_eq!(run_args(&["frobnicate"]).0, 2);
        assert_eq!(run_args(&["info"]).0, 2);
        assert_eq!(run_args(&["render", "--model", "a", "--scene", "b", "--out", "x"]).0, 2);
    }

    #[test]
    fn help_exits_zero() {
        for verb in ["gen-data", "train", "render", "compress", "compose", "eval", "info", "gradcheck"] {
            assert_eq!(run_args(&[verb, "--help"]).0, 0, "{verb}");
        }
    }

    #[test]
    fn missing_file_is_runtime_error() {
        assert_eq!(run_args(&["info", "/nonexistent/model.ccnf"]).0, 1);
    }

    #[test]
    fn resolution_parser() {
        assert_eq!(parse_res("64x32"), Ok((64, 32)));
        assert!(parse_res("64").is_err());
        assert!(parse_res("0x4").is_err());
    }
}
