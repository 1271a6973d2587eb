//! Progressive training: surfel-only fitting with density control, error
//! based selection and child spawning, then mixed fine-tuning.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::backward::{backward, DensifyStats, GradBuffer, GradMask, Upstream};
use crate::dataset::{Dataset, RandomViews, View};
use crate::error::{Error, Result};
use crate::io::{save_scene, scene_to_bytes, sha256_hex, write_png};
use crate::losses::{
    depth_distortion, dis_loss, normal_consistency, pos_loss, rgb_loss, sca_loss, total_stage1, total_stage2, LossTerms,
    LossWeights,
};
use crate::math::{quat_to_mat, sigmoid, Vec3};
use crate::metrics::psnr;
use crate::optim::{gather, gather_grad, scatter, Adam, Group, LearningRates, ALL_GROUPS};
use crate::raster::{render, RasterConfig, RenderMode};
use crate::rig::all_frames;
use crate::scene::{GaussianTree, RiggedMesh, Scene, Surfel2D};
use crate::selection::run_selection;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    pub interval: usize,
    pub start: usize,
    /// Last densification step as a fraction of the stage-1 length.
    pub stop_fraction: f64,
    /// Mean NDC positional gradient above which a surfel is cloned or split.
    pub grad_threshold: f64,
    pub prune_opacity: f64,
    /// Surfels whose largest world scale exceeds this fraction of the scene
    /// extent are split, smaller ones cloned.
    pub percent_dense: f64,
    pub max_surfels: usize,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            interval: 100,
            start: 500,
            stop_fraction: 0.8,
            grad_threshold: 2e-4,
            prune_opacity: 0.005,
            percent_dense: 0.01,
            max_surfels: 200_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Sampled views.
    pub n: usize,
    /// Tiles per view.
    pub k: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { n: 16, k: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    pub seed: u64,
    pub sh_degree: u8,
    pub tile_size: u32,
    pub background: [f64; 3],
    pub lr: LearningRates,
    pub densify: DensifyConfig,
    pub selection: SelectionConfig,
    pub losses: LossWeights,
    /// Train surfel opacity during stage 2 as well.
    pub stage2_surfel_opacity: bool,
    /// Adds a per-frame residual table on top of the shared perturbation.
    pub per_frame_perturbation: bool,
    pub disable_children: bool,
    pub disable_perturbation: bool,
    pub disable_dis_loss: bool,
    /// Checkpoint interval in steps (0 disables).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_steps: 2000,
            stage2_steps: 1000,
            seed: 0,
            sh_degree: 1,
            tile_size: 16,
            background: [0.0; 3],
            lr: LearningRates::default(),
            densify: DensifyConfig::default(),
            selection: SelectionConfig::default(),
            losses: LossWeights::default(),
            stage2_surfel_opacity: false,
            per_frame_perturbation: false,
            disable_children: false,
            disable_perturbation: false,
            disable_dis_loss: false,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Format(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.stage1_steps == 0 || self.stage2_steps == 0 {
            return bad("stage lengths must be positive");
        }
        if self.selection.n == 0 {
            return bad("selection needs n >= 1");
        }
        if self.sh_degree > crate::sh::MAX_DEGREE {
            return bad("sh degree out of range");
        }
        if self.tile_size == 0 {
            return bad("tile size must be positive");
        }
        let d = &self.densify;
        if d.interval == 0 || !(d.grad_threshold >= 0.0) || !(d.prune_opacity >= 0.0) || !(d.percent_dense >= 0.0) || !(0.0..=1.0).contains(&d.stop_fraction) {
            return bad("densification thresholds must be non-negative");
        }
        if self.background.iter().any(|v| !v.is_finite()) {
            return bad("background must be finite");
        }
        self.lr.validate()?;
        self.losses.validate()
    }

    pub fn raster(&self, trace: bool) -> RasterConfig {
        RasterConfig {
            tile_size: self.tile_size,
            background: Vec3::from(self.background),
            trace,
            ..Default::default()
        }
    }

    fn densify_stop(&self) -> usize {
        (self.densify.stop_fraction * self.stage1_steps as f64).floor() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub stage: u8,
    pub step: usize,
    pub view: usize,
    pub total: f64,
    pub terms: LossTerms,
    pub psnr: f64,
    pub surfels: usize,
    pub children: usize,
}

pub fn log_to_csv(rows: &[LogRow]) -> String {
    let mut s = String::from("stage,step,view,total,rgb,l1,dssim,pos,sca,depth,normal,dis,psnr,surfels,children\n");
    for r in rows {
        let t = &r.terms;
        let _ = writeln!(
            s,
            "{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.6},{},{}",
            r.stage, r.step, r.view, r.total, t.rgb, t.l1, t.dssim, t.pos, t.sca, t.depth, t.normal, t.dis, r.psnr, r.surfels, r.children
        );
    }
    s
}

/// Half the diagonal of the canonical mesh bounds.
pub fn scene_extent(mesh: &RiggedMesh) -> f64 {
    let (lo, hi) = mesh.bounds();
    (0.5 * (hi - lo).norm()).max(1e-9)
}

/// SHA-256 over every surfel parameter that places or shapes a surfel.
pub fn surfel_geometry_hash(scene: &Scene) -> String {
    let mut bytes = Vec::new();
    let mut put = |v: f64| bytes.extend_from_slice(&v.to_le_bytes());
    for s in &scene.surfels {
        s.mu_l.iter().chain(s.rot_l.iter()).chain(s.s_l.iter()).for_each(|v| put(*v));
        put(s.parent_tri as f64);
    }
    scene.perturb.p2d.iter().flat_map(|p| p.iter()).for_each(|v| put(*v));
    for r in scene.perturb.per_frame.values() {
        r.p2d.iter().flat_map(|p| p.iter()).for_each(|v| put(*v));
    }
    sha256_hex(&bytes)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DensifyReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

/// Clones small and splits large high-gradient surfels, then prunes nearly
/// transparent ones while keeping at least one surfel per triangle.
/// Offspring keep the parent's triangle binding and perturbation; their
/// optimizer moments start at zero.
pub fn densify_and_prune(
    scene: &mut Scene,
    mesh: &RiggedMesh,
    stats: &DensifyStats,
    adam: &mut Adam,
    cfg: &DensifyConfig,
    extent: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DensifyReport> {
    let first = *mesh.frames.keys().next().ok_or(Error::UnknownFrame(0))?;
    let frames = all_frames(mesh, first)?;
    let old = scene.surfels.clone();
    let n_old = old.len();
    let mut report = DensifyReport::default();
    // (surfel, source row for optimizer state, source row for perturbation)
    let mut next: Vec<(Surfel2D, Option<usize>, usize)> = Vec::with_capacity(n_old);
    let mut offspring: Vec<(Surfel2D, Option<usize>, usize)> = Vec::new();
    let mut budget = cfg.max_surfels.saturating_sub(n_old);
    for (i, s) in old.iter().enumerate() {
        let grow = stats.mean(i) >= cfg.grad_threshold && stats.count[i] > 0 && budget > 0;
        if !grow {
            next.push((s.clone(), Some(i), i));
            continue;
        }
        let lambda = frames[s.parent_tri as usize].lambda;
        let world = lambda * s.scales().max();
        budget -= 1;
        if world <= cfg.percent_dense * extent {
            next.push((s.clone(), Some(i), i));
            offspring.push((s.clone(), None, i));
            report.cloned += 1;
        } else {
            let r = quat_to_mat(&s.rot_l);
            let sc = s.scales();
            for _ in 0..2 {
                let z = Vec3::new(rng.sample::<f64, _>(StandardNormal) * sc.x, rng.sample::<f64, _>(StandardNormal) * sc.y, 0.0);
                let mut c = s.clone();
                c.mu_l = s.mu_l + r * z;
                c.s_l = s.s_l.map(|v| v - 1.6f64.ln());
                offspring.push((c, None, i));
            }
            report.split += 1;
        }
    }
    next.extend(offspring);

    let ntri = scene.num_triangles();
    let mut keep: Vec<bool> = next.iter().map(|(s, _, _)| sigmoid(s.opacity_raw) >= cfg.prune_opacity).collect();
    let mut best: Vec<Option<usize>> = vec![None; ntri];
    let mut has: Vec<bool> = vec![false; ntri];
    for (k, (s, _, _)) in next.iter().enumerate() {
        let t = s.parent_tri as usize;
        has[t] |= keep[k];
        if best[t].is_none_or(|b| s.opacity_raw > next[b].0.opacity_raw) {
            best[t] = Some(k);
        }
    }
    for t in 0..ntri {
        if !has[t] {
            if let Some(b) = best[t] {
                keep[b] = true;
            }
        }
    }
    let mut surfels = Vec::new();
    let mut state_src = Vec::new();
    let mut perturb_src = Vec::new();
    for ((s, st, p), k) in next.into_iter().zip(&keep) {
        if *k {
            surfels.push(Surfel2D { child: None, ..s });
            state_src.push(st);
            perturb_src.push(p);
        } else {
            report.pruned += 1;
        }
    }
    if !scene.children.is_empty() {
        return Err(Error::Inconsistent("density control runs before children exist".into()));
    }
    scene.tree = GaussianTree::build(ntri, &surfels);
    scene.surfels = surfels;
    scene.perturb.remap_surfels(&perturb_src);
    let k = crate::sh::num_coeffs(scene.sh_degree);
    for g in ALL_GROUPS.iter().filter(|g| !g.is_child()) {
        adam.remap(*g, g.stride(k), n_old, &state_src);
    }
    scene.validate()?;
    Ok(report)
}

struct StepOutput {
    terms: LossTerms,
    total: f64,
    grad: GradBuffer,
    psnr: f64,
}

fn compute_step(scene: &Scene, mesh: &RiggedMesh, view: &View, cfg: &TrainConfig, stage: Stage, mask: GradMask) -> Result<StepOutput> {
    let w = &cfg.losses;
    let (mode, trace) = match stage {
        Stage::One => (RenderMode::Surfels, w.lambda3 > 0.0 || w.lambda4 > 0.0),
        Stage::Two => (RenderMode::Mixed, false),
    };
    let out = render(scene, mesh, view.frame, &view.camera, mode, &cfg.raster(trace))?;
    let rgb = rgb_loss(&out.color, &view.image, w.lambda_dssim)?;
    let mut terms = LossTerms {
        rgb: rgb.value,
        l1: rgb.l1,
        dssim: rgb.dssim,
        ..Default::default()
    };
    let mut up = Upstream {
        color: Some(&rgb.grad),
        ..Default::default()
    };
    let mut trace_grads = Vec::new();
    let mut depth_grad = None;
    if let Some(tr) = &out.trace {
        let (ld, gd) = depth_distortion(tr);
        let nl = normal_consistency(tr, &out.median_depth, &view.camera)?;
        terms.depth = ld;
        terms.normal = nl.value;
        trace_grads = gd
            .iter()
            .zip(&nl.trace_grads)
            .map(|(a, b)| crate::backward::TraceGrad {
                omega: w.lambda3 * a.omega + w.lambda4 * b.omega,
                depth: w.lambda3 * a.depth + w.lambda4 * b.depth,
                normal: a.normal * w.lambda3 + b.normal * w.lambda4,
            })
            .collect();
        let mut dg = nl.depth_grad;
        dg.data.iter_mut().for_each(|v| *v *= w.lambda4);
        depth_grad = Some(dg);
    }
    if !trace_grads.is_empty() {
        up.trace = Some(&trace_grads);
    }
    up.median_depth = depth_grad.as_ref();
    let mut grad = backward(scene, mesh, view.frame, &out, &up, mask)?;
    let total = match stage {
        Stage::One => {
            let (lp, gp) = pos_loss(scene, w.eps_pos);
            let (ls, gs) = sca_loss(scene, w.eps_sca);
            terms.pos = lp;
            terms.sca = ls;
            if mask.surfel_geometry {
                for (g, (a, b)) in grad.surfels.iter_mut().zip(gp.iter().zip(&gs)) {
                    g.mu_l += a * w.lambda1;
                    g.s_l += b * w.lambda2;
                }
            }
            total_stage1(&terms, w)
        }
        Stage::Two => {
            if !cfg.disable_dis_loss {
                let (ld, gd) = dis_loss(scene, view.frame, w.eps_dis);
                terms.dis = ld;
                if mask.children {
                    for (g, d) in grad.children.iter_mut().zip(&gd) {
                        g.mu_l += d * w.lambda5;
                        g.p3d += d * w.lambda5;
                    }
                }
            }
            total_stage2(&terms, w)
        }
    };
    Ok(StepOutput {
        terms,
        total,
        grad,
        psnr: psnr(&out.color, &view.image)?,
    })
}

fn group_enabled(g: Group, mask: GradMask, cfg: &TrainConfig) -> bool {
    let perturb = matches!(g, Group::SurfelPerturb | Group::SurfelFramePerturb | Group::ChildPerturb | Group::ChildFramePerturb);
    let frame = matches!(g, Group::SurfelFramePerturb | Group::ChildFramePerturb);
    g.enabled(mask) && !(perturb && cfg.disable_perturbation) && !(frame && !cfg.per_frame_perturbation)
}

fn apply_update(scene: &mut Scene, grad: &GradBuffer, t: u32, adam: &mut Adam, cfg: &TrainConfig, mask: GradMask, extent: f64, progress: f64) -> Result<()> {
    adam.begin_step();
    for g in ALL_GROUPS {
        if !group_enabled(g, mask, cfg) {
            continue;
        }
        let mut p = gather(scene, g);
        if p.is_empty() {
            continue;
        }
        let d = gather_grad(scene, grad, g, t);
        adam.update(g, &mut p, &d, cfg.lr.rate(g, extent, progress))?;
        scatter(scene, g, &p)?;
    }
    Ok(())
}

fn dump_and_fail(scene: &Scene, dump: Option<&Path>, step: usize, reason: String) -> Error {
    if let Some(dir) = dump {
        let path = dir.join(format!("diverged_step{step:06}.mxgs"));
        if let Err(e) = std::fs::create_dir_all(dir).map_err(Error::from).and_then(|_| save_scene(scene, &path)) {
            log::error!("could not write state dump {}: {e}", path.display());
        } else {
            log::error!("state dumped to {}", path.display());
        }
    }
    Error::Diverged { step, reason }
}

/// Where training writes checkpoints and divergence dumps.
#[derive(Clone, Debug, Default)]
pub struct Outputs {
    pub dir: Option<PathBuf>,
}

impl Outputs {
    fn checkpoint(&self, scene: &Scene, stage: u8, step: usize, every: usize) -> Result<()> {
        if let Some(dir) = &self.dir {
            if every > 0 && step % every == 0 {
                let d = dir.join("checkpoints");
                std::fs::create_dir_all(&d)?;
                save_scene(scene, &d.join(format!("stage{stage}_{step:06}.mxgs")))?;
            }
        }
        Ok(())
    }
}

fn check_step(scene: &Scene, s: &StepOutput, step: usize, out: &Outputs) -> Result<()> {
    if !s.total.is_finite() {
        return Err(dump_and_fail(scene, out.dir.as_deref(), step, format!("loss is {}", s.total)));
    }
    if !s.grad.all_finite() {
        return Err(dump_and_fail(scene, out.dir.as_deref(), step, "non-finite gradient".into()));
    }
    Ok(())
}

fn prepare_frames(scene: &mut Scene, ds: &Dataset, cfg: &TrainConfig) {
    if cfg.per_frame_perturbation {
        for v in &ds.train {
            scene.perturb.ensure_frame(v.frame);
        }
    }
}

/// Surfel-only training with density control. `rng` drives view sampling
/// and split offsets.
pub fn train_stage1(scene: &mut Scene, ds: &Dataset, cfg: &TrainConfig, rng: &mut ChaCha8Rng, out: &Outputs) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    ds.validate()?;
    if !scene.children.is_empty() {
        return Err(Error::Inconsistent("stage 1 expects a scene without children".into()));
    }
    prepare_frames(scene, ds, cfg);
    let extent = scene_extent(&ds.mesh);
    let mask = GradMask::stage1();
    let mut adam = Adam::default();
    let mut stats = DensifyStats::new(scene.surfels.len());
    let stop = cfg.densify_stop();
    let mut log = Vec::with_capacity(cfg.stage1_steps);
    for step in 1..=cfg.stage1_steps {
        let vi = rng.random_range(0..ds.train.len());
        let view = &ds.train[vi];
        let s = compute_step(scene, &ds.mesh, view, cfg, Stage::One, mask)?;
        check_step(scene, &s, step, out)?;
        stats.accumulate(&s.grad);
        let progress = (step - 1) as f64 / cfg.stage1_steps.max(2).saturating_sub(1) as f64;
        apply_update(scene, &s.grad, view.frame, &mut adam, cfg, mask, extent, progress)?;
        log.push(LogRow {
            stage: 1,
            step,
            view: vi,
            total: s.total,
            terms: s.terms,
            psnr: s.psnr,
            surfels: scene.surfels.len(),
            children: 0,
        });
        let d = &cfg.densify;
        if step >= d.start && step <= stop && step % d.interval == 0 {
            let r = densify_and_prune(scene, &ds.mesh, &stats, &mut adam, d, extent, rng)?;
            log::debug!("step {step}: cloned {} split {} pruned {} -> {} surfels", r.cloned, r.split, r.pruned, scene.surfels.len());
            stats.reset(scene.surfels.len());
        }
        out.checkpoint(scene, 1, step, cfg.checkpoint_every)?;
    }
    Ok(log)
}

/// Mixed training of children, surfel color and child perturbations with
/// surfel geometry frozen.
pub fn train_stage2(scene: &mut Scene, ds: &Dataset, cfg: &TrainConfig, rng: &mut ChaCha8Rng, out: &Outputs) -> Result<Vec<LogRow>> {
    cfg.validate()?;
    ds.validate()?;
    prepare_frames(scene, ds, cfg);
    let extent = scene_extent(&ds.mesh);
    let mask = GradMask::stage2(cfg.stage2_surfel_opacity);
    let before = surfel_geometry_hash(scene);
    let mut adam = Adam::default();
    let mut log = Vec::with_capacity(cfg.stage2_steps);
    for step in 1..=cfg.stage2_steps {
        let vi = rng.random_range(0..ds.train.len());
        let view = &ds.train[vi];
        let s = compute_step(scene, &ds.mesh, view, cfg, Stage::Two, mask)?;
        check_step(scene, &s, step, out)?;
        let progress = (step - 1) as f64 / cfg.stage2_steps.max(2).saturating_sub(1) as f64;
        apply_update(scene, &s.grad, view.frame, &mut adam, cfg, mask, extent, progress)?;
        log.push(LogRow {
            stage: 2,
            step,
            view: vi,
            total: s.total,
            terms: s.terms,
            psnr: s.psnr,
            surfels: scene.surfels.len(),
            children: scene.children.len(),
        });
        out.checkpoint(scene, 2, step, cfg.checkpoint_every)?;
    }
    if surfel_geometry_hash(scene) != before {
        return Err(Error::Inconsistent("surfel geometry changed during stage 2".into()));
    }
    Ok(log)
}

/// Mean PSNR of the scene over `views`.
pub fn evaluate(scene: &Scene, mesh: &RiggedMesh, views: &[View], mode: RenderMode, raster: &RasterConfig) -> Result<f64> {
    if views.is_empty() {
        return Err(Error::InvalidParameter("no views to evaluate".into()));
    }
    let mut sum = 0.0;
    for v in views {
        let out = render(scene, mesh, v.frame, &v.camera, mode, raster)?;
        sum += psnr(&out.color, &v.image)?;
    }
    Ok(sum / views.len() as f64)
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub stage1_scene: Scene,
    pub scene: Scene,
    pub selected: BTreeSet<u32>,
    pub log: Vec<LogRow>,
}

/// Result of the first half of [`run_pipeline`]. The generator continues
/// into selection and stage 2.
#[derive(Clone, Debug)]
pub struct Stage1Output {
    pub scene: Scene,
    pub log: Vec<LogRow>,
    pub rng: ChaCha8Rng,
}

/// Scene initialization and stage 1 with the seeded generator.
pub fn run_stage1(ds: &Dataset, cfg: &TrainConfig, out: &Outputs) -> Result<Stage1Output> {
    cfg.validate()?;
    ds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scene = Scene::from_mesh(&ds.mesh, cfg.sh_degree)?;
    let log = train_stage1(&mut scene, ds, cfg, &mut rng, out)?;
    Ok(Stage1Output { scene, log, rng })
}

/// Selection, child spawning and stage 2 on top of a stage-1 result.
/// Together with [`run_stage1`] this is exactly [`run_pipeline`], so one
/// stage-1 run can be finished under several stage-2 settings.
pub fn finish_pipeline(ds: &Dataset, cfg: &TrainConfig, stage1: Stage1Output, out: &Outputs) -> Result<PipelineResult> {
    cfg.validate()?;
    let Stage1Output { mut scene, mut log, mut rng } = stage1;
    let stage1_scene = scene.clone();
    let selected = if cfg.disable_children {
        BTreeSet::new()
    } else {
        let mut sampler = RandomViews::new(&ds.train, rng.random());
        run_selection(&scene, &ds.mesh, &mut sampler, cfg.selection.n, cfg.selection.k, &cfg.raster(false))?
    };
    scene.spawn_children(&selected)?;
    log.extend(train_stage2(&mut scene, ds, cfg, &mut rng, out)?);
    if let Some(dir) = &out.dir {
        std::fs::create_dir_all(dir)?;
        save_scene(&scene, &dir.join("scene.mxgs"))?;
        save_scene(&stage1_scene, &dir.join("stage1.mxgs"))?;
        std::fs::write(dir.join("selected.txt"), crate::selection::format_index_list(&selected))?;
        std::fs::write(dir.join("train_log.csv"), log_to_csv(&log))?;
        std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
        let rd = dir.join("renders");
        std::fs::create_dir_all(&rd)?;
        for (i, v) in ds.test.iter().enumerate() {
            let o = render(&scene, &ds.mesh, v.frame, &v.camera, RenderMode::Mixed, &cfg.raster(false))?;
            write_png(&rd.join(format!("test_{i:03}.png")), &o.color)?;
        }
    }
    Ok(PipelineResult {
        stage1_scene,
        scene,
        selected,
        log,
    })
}

/// Stage 1, selection, child spawning and stage 2. With an output directory
/// it also writes `scene.mxgs`, `stage1.mxgs`, `selected.txt`, `train_log.csv`,
/// `config.toml` and renders of the test views.
pub fn run_pipeline(ds: &Dataset, cfg: &TrainConfig, out: &Outputs) -> Result<PipelineResult> {
    let s1 = run_stage1(ds, cfg, out)?;
    finish_pipeline(ds, cfg, s1, out)
}

/// Bytes of the scene file, for bit-exact comparisons.
pub fn scene_bytes(scene: &Scene) -> Vec<u8> {
    scene_to_bytes(scene)
}
