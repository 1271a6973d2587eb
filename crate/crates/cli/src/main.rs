//! Command-line front end: scene init, training, selection, rendering,
//! mesh extraction, gradient checks, metrics and synthetic datasets.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mixsplat::backward::GradMask;
use mixsplat::camera::Camera;
use mixsplat::dataset::{load_dataset, save_dataset, Dataset, RandomViews};
use mixsplat::gradcheck::{check_scene, random_scene, GradcheckConfig, GradcheckReport, ProbeLoss};
use mixsplat::io::{load_rigged_mesh, load_scene, read_png, save_scene, write_pfm, write_png};
use mixsplat::meshing::{extract_mesh, render_fusion_inputs, tsdf_fuse, VolumeParams};
use mixsplat::metrics::{compute_metrics, format_psnr};
use mixsplat::raster::{render, RasterConfig, RenderMode};
use mixsplat::scene::Scene;
use mixsplat::selection::{format_index_list, parse_index_list, run_selection};
use mixsplat::synthetic;
use mixsplat::train::{finish_pipeline, log_to_csv, run_pipeline, train_stage1, train_stage2, Outputs, Stage1Output, TrainConfig};
use mixsplat::Error;

#[derive(Parser)]
#[command(name = "mixsplat", version, about = "Mixed 2D/3D Gaussian splatting on rigged meshes")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a scene with one surfel per mesh triangle.
    Init(InitArgs),
    /// Train the full pipeline or a single stage.
    Train(TrainArgs),
    /// Run error-driven surfel selection and write the selected indices.
    Select(SelectArgs),
    /// Render a scene from a camera file.
    Render(RenderArgs),
    /// Fuse rendered depth into a TSDF and extract a colored mesh.
    ExtractMesh(ExtractArgs),
    /// Compare analytic gradients with finite differences on random scenes.
    Gradcheck(GradcheckArgs),
    /// L2, PSNR and SSIM between two directories of PNG images.
    Metrics(MetricsArgs),
    /// Write one of the built-in synthetic datasets.
    MakeSynthetic(SyntheticArgs),
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    mesh: PathBuf,
    /// Directory of per-frame vertex files.
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    sh_degree: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    All,
    One,
    Two,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset manifest.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    stage: StageArg,
    /// Input scene for `--stage two` (a stage-1 result).
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Selected surfel indices for `--stage two`; selection runs if absent.
    #[arg(long)]
    selected: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stage1_steps: Option<usize>,
    #[arg(long)]
    stage2_steps: Option<usize>,
    #[arg(long)]
    disable_children: bool,
    #[arg(long)]
    disable_perturbation: bool,
    #[arg(long)]
    disable_dis_loss: bool,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Mixed,
    Surfels,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Canonical mesh (OBJ).
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long, default_value_t = 0)]
    frame: u32,
    #[arg(long, value_enum, default_value = "mixed")]
    mode: ModeArg,
    #[arg(long, default_value_t = 16)]
    tile_size: u32,
    #[arg(long, num_args = 3, value_names = ["R", "G", "B"])]
    background: Option<Vec<f64>>,
    #[arg(long)]
    out: PathBuf,
    /// Also write median depth as PFM.
    #[arg(long)]
    depth: Option<PathBuf>,
    /// Also write accumulated alpha as PNG.
    #[arg(long)]
    alpha: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scene: PathBuf,
    /// Voxels along the longest side of the mesh bounds.
    #[arg(long, default_value_t = 128)]
    resolution: usize,
    /// Truncation distance in voxels.
    #[arg(long, default_value_t = 4.0)]
    truncation: f64,
    /// Drop connected components with fewer faces.
    #[arg(long, default_value_t = 0)]
    min_faces: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MaskArg {
    Stage1,
    Stage2,
    Full,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    scenes: u64,
    #[arg(long, value_enum, default_value = "full")]
    mask: MaskArg,
    #[arg(long, default_value_t = 8)]
    max_surfels: usize,
    #[arg(long, default_value_t = 4)]
    max_children: usize,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    renders: PathBuf,
    #[arg(long)]
    truths: PathBuf,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SyntheticKind {
    /// Two-triangle textured quad.
    Quad,
    /// Subdivided quad with a striped, view-dependent patch.
    Patch,
    /// Surfel-covered icosphere seen from the cube corners.
    Sphere,
}

#[derive(Args)]
struct SyntheticArgs {
    #[arg(value_enum)]
    kind: SyntheticKind,
    #[arg(long, default_value_t = 64)]
    size: u32,
    /// Training views (quad only).
    #[arg(long, default_value_t = 4)]
    views: usize,
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<TrainConfig> {
    Ok(match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| read_error(p, e))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    })
}

fn read_error(p: &Path, e: std::io::Error) -> Error {
    match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(p.to_path_buf()),
        _ => Error::Io(e),
    }
}

fn init(a: InitArgs) -> anyhow::Result<()> {
    let mesh = load_rigged_mesh(&a.mesh, a.frames.as_deref())?;
    let scene = Scene::from_mesh(&mesh, a.sh_degree)?;
    save_scene(&scene, &a.out)?;
    println!("{} surfels on {} triangles -> {}", scene.surfels.len(), mesh.num_triangles(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.stage1_steps {
        cfg.stage1_steps = s;
    }
    if let Some(s) = a.stage2_steps {
        cfg.stage2_steps = s;
    }
    cfg.disable_children |= a.disable_children;
    cfg.disable_perturbation |= a.disable_perturbation;
    cfg.disable_dis_loss |= a.disable_dis_loss;
    cfg.validate()?;
    let ds = load_dataset(&a.data)?;
    let out = Outputs { dir: Some(a.out.clone()) };
    std::fs::create_dir_all(&a.out)?;
    match a.stage {
        StageArg::All => {
            let r = run_pipeline(&ds, &cfg, &out)?;
            println!(
                "trained {} surfels, {} children ({} steps) -> {}",
                r.scene.surfels.len(),
                r.scene.children.len(),
                r.log.len(),
                a.out.display()
            );
        }
        StageArg::One => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut scene = Scene::from_mesh(&ds.mesh, cfg.sh_degree)?;
            let log = train_stage1(&mut scene, &ds, &cfg, &mut rng, &out)?;
            save_scene(&scene, &a.out.join("stage1.mxgs"))?;
            std::fs::write(a.out.join("train_log.csv"), log_to_csv(&log))?;
            std::fs::write(a.out.join("config.toml"), cfg.to_toml())?;
            println!("stage 1: {} surfels -> {}", scene.surfels.len(), a.out.join("stage1.mxgs").display());
        }
        StageArg::Two => {
            let Some(path) = &a.scene else {
                bail!(Error::InvalidParameter("--stage two needs --scene".into()));
            };
            let mut scene = load_scene(path)?;
            if !scene.children.is_empty() {
                bail!(Error::Inconsistent("input scene already has children".into()));
            }
            match &a.selected {
                Some(sel) => {
                    let text = std::fs::read_to_string(sel).map_err(|e| read_error(sel, e))?;
                    let selected = if cfg.disable_children { BTreeSet::new() } else { parse_index_list(&text)? };
                    scene.spawn_children(&selected)?;
                    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
                    let log = train_stage2(&mut scene, &ds, &cfg, &mut rng, &out)?;
                    save_scene(&scene, &a.out.join("scene.mxgs"))?;
                    std::fs::write(a.out.join("train_log.csv"), log_to_csv(&log))?;
                    std::fs::write(a.out.join("config.toml"), cfg.to_toml())?;
                }
                None => {
                    let s1 = Stage1Output {
                        scene,
                        log: Vec::new(),
                        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed),
                    };
                    let r = finish_pipeline(&ds, &cfg, s1, &out)?;
                    scene = r.scene;
                }
            }
            println!("stage 2: {} children -> {}", scene.children.len(), a.out.join("scene.mxgs").display());
        }
    }
    Ok(())
}

fn select(a: SelectArgs) -> anyhow::Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(n) = a.n {
        cfg.selection.n = n;
    }
    if let Some(k) = a.k {
        cfg.selection.k = k;
    }
    cfg.validate()?;
    let ds = load_dataset(&a.data)?;
    let scene = load_scene(&a.scene)?;
    let mut sampler = RandomViews::new(&ds.train, a.seed);
    let u = run_selection(&scene, &ds.mesh, &mut sampler, cfg.selection.n, cfg.selection.k, &cfg.raster(false))?;
    std::fs::write(&a.out, format_index_list(&u))?;
    println!("selected {} of {} surfels -> {}", u.len(), scene.surfels.len(), a.out.display());
    Ok(())
}

fn render_cmd(a: RenderArgs) -> anyhow::Result<()> {
    let mesh = load_rigged_mesh(&a.mesh, a.frames.as_deref())?;
    let scene = load_scene(&a.scene)?;
    let cam = Camera::load(&a.camera)?;
    let background = match a.background.as_deref() {
        Some([r, g, b]) => mixsplat::math::Vec3::new(*r, *g, *b),
        _ => mixsplat::math::Vec3::zeros(),
    };
    let cfg = RasterConfig {
        tile_size: a.tile_size,
        background,
        ..Default::default()
    };
    let mode = match a.mode {
        ModeArg::Mixed => RenderMode::Mixed,
        ModeArg::Surfels => RenderMode::Surfels,
    };
    let out = render(&scene, &mesh, a.frame, &cam, mode, &cfg)?;
    write_png(&a.out, &out.color)?;
    if let Some(p) = &a.depth {
        write_pfm(p, &out.median_depth)?;
    }
    if let Some(p) = &a.alpha {
        write_png(p, &out.alpha)?;
    }
    println!("{}x{} -> {}", cam.width, cam.height, a.out.display());
    Ok(())
}

fn extract(a: ExtractArgs) -> anyhow::Result<()> {
    let ds = load_dataset(&a.data)?;
    let scene = load_scene(&a.scene)?;
    let (lo, hi) = ds.mesh.bounds();
    let params = VolumeParams::covering(&lo, &hi, a.resolution, a.truncation, (a.truncation.ceil() as usize) + 2)?;
    let inputs = render_fusion_inputs(&scene, &ds.mesh, &ds.train_cameras(), &RasterConfig::default())?;
    let vol = tsdf_fuse(&inputs, params)?;
    let mesh = extract_mesh(&vol, a.min_faces);
    mesh.save_ply(&a.out)?;
    println!("{} vertices, {} faces -> {}", mesh.vertices.len(), mesh.triangles.len(), a.out.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> anyhow::Result<()> {
    let (mask, mode) = match a.mask {
        MaskArg::Stage1 => (GradMask::stage1(), RenderMode::Surfels),
        MaskArg::Stage2 => (GradMask::stage2(false), RenderMode::Mixed),
        MaskArg::Full => (GradMask::full(), RenderMode::Mixed),
    };
    let cfg = GradcheckConfig::default();
    let mut total = GradcheckReport::default();
    for i in 0..a.scenes {
        let seed = a.seed.wrapping_mul(1_000_003).wrapping_add(i);
        let (scene, mesh, cam) = random_scene(seed, a.max_surfels, a.max_children);
        let raster = RasterConfig {
            tile_size: 8,
            trace: mode == RenderMode::Surfels,
            ..Default::default()
        };
        let probe = ProbeLoss::new(cam.width, cam.height, seed);
        total.merge(&check_scene(&scene, &mesh, 0, &cam, mode, &raster, mask, &probe, &cfg)?);
    }
    print!("{}", total.summary());
    println!("max relative error {:.6e}", total.max_rel_err());
    for (r, an, nu) in &total.failures {
        println!("failure {r:?}: analytic {an:.9e} numeric {nu:.9e}");
    }
    if !total.passed() {
        bail!(CheckFailed("gradient check failed".into()));
    }
    Ok(())
}

fn png_names(dir: &Path) -> anyhow::Result<BTreeSet<String>> {
    let rd = std::fs::read_dir(dir).map_err(|e| read_error(dir, e))?;
    let mut names = BTreeSet::new();
    for e in rd {
        let name = e?.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") {
            names.insert(name);
        }
    }
    Ok(names)
}

fn metrics(a: MetricsArgs) -> anyhow::Result<()> {
    let names = png_names(&a.renders)?;
    let truths = png_names(&a.truths)?;
    if let Some(missing) = names.iter().find(|n| !truths.contains(*n)) {
        bail!(Error::MissingFile(a.truths.join(missing)));
    }
    let mut pairs = Vec::new();
    for n in &names {
        pairs.push((n.clone(), read_png(&a.renders.join(n))?, read_png(&a.truths.join(n))?));
    }
    let table = compute_metrics(&pairs)?;
    let text = table.to_tsv();
    match &a.out {
        Some(p) => std::fs::write(p, &text)?,
        None => print!("{text}"),
    }
    eprintln!(
        "mean L2 {:.6e} PSNR {} SSIM {:.6} (LPIPS not computed)",
        table.mean.l2,
        format_psnr(table.mean.psnr),
        table.mean.ssim
    );
    Ok(())
}

fn make_synthetic(a: SyntheticArgs) -> anyhow::Result<()> {
    let (ds, cfg, scene): (Dataset, TrainConfig, Option<Scene>) = match a.kind {
        SyntheticKind::Quad => (synthetic::textured_quad(a.size, a.views), synthetic::quad_config(), None),
        SyntheticKind::Patch => (synthetic::view_dependent_quad(a.size), synthetic::patch_config(), None),
        SyntheticKind::Sphere => {
            let (ds, scene) = synthetic::surfel_sphere(a.size)?;
            (ds, TrainConfig::default(), Some(scene))
        }
    };
    let manifest = save_dataset(&ds, &a.out)?;
    std::fs::write(a.out.join("config.toml"), cfg.to_toml())?;
    if let Some(s) = &scene {
        save_scene(s, &a.out.join("scene.mxgs"))?;
    }
    println!("{} train / {} test views -> {}", ds.train.len(), ds.test.len(), manifest.display());
    Ok(())
}

/// A check that ran to completion but did not pass.
#[derive(Debug)]
struct CheckFailed(String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Category label and exit code of an error.
fn categorize(e: &anyhow::Error) -> (&'static str, u8) {
    if e.downcast_ref::<CheckFailed>().is_some() {
        return ("check", 6);
    }
    match e.downcast_ref::<Error>() {
        Some(Error::MissingFile(_)) | Some(Error::Io(_)) => ("io", 3),
        Some(Error::Format(_)) | Some(Error::Json(_)) => ("format", 3),
        Some(Error::InvalidParameter(_)) | Some(Error::OutOfRange { .. }) | Some(Error::UnknownFrame(_)) => ("input", 4),
        Some(Error::DegenerateTriangle { .. })
        | Some(Error::DegenerateFrame { .. })
        | Some(Error::InvalidMesh(_))
        | Some(Error::DimensionMismatch(_))
        | Some(Error::Inconsistent(_))
        | Some(Error::DuplicateChild(_)) => ("data", 4),
        Some(Error::Diverged { .. }) | Some(Error::NonFinite { .. }) => ("numeric", 5),
        Some(Error::Overflow(_)) | Some(Error::MissingForwardCache) => ("internal", 1),
        None if e.downcast_ref::<std::io::Error>().is_some() => ("io", 3),
        None => ("internal", 1),
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    match cli.command {
        Command::Init(a) => init(a),
        Command::Train(a) => train(a),
        Command::Select(a) => select(a),
        Command::Render(a) => render_cmd(a),
        Command::ExtractMesh(a) => extract(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Metrics(a) => metrics(a),
        Command::MakeSynthetic(a) => make_synthetic(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (cat, code) = categorize(&e);
            eprintln!("error [{cat}]: {e:#}");
            ExitCode::from(code)
        }
    }
}
