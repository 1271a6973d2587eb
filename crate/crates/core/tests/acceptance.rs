//! Acceptance checks. Run with `cargo test --release --test acceptance`.
//! Prints one PASS/FAIL line per criterion and exits nonzero on any failure.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::{Duration, Instant};

use mixsplat::backward::GradMask;
use mixsplat::buffer::{build_splat_buffer, depth_bits, TileGrid};
use mixsplat::camera::Camera;
use mixsplat::dataset::{Dataset, RandomViews};
use mixsplat::gradcheck::{check_scene, random_scene, GradcheckConfig, GradcheckReport, ParamClass, ProbeLoss};
use mixsplat::image::Image;
use mixsplat::io::{load_scene, scene_to_bytes};
use mixsplat::losses::{dis_loss, pos_loss, sca_loss, total_stage1, LossTerms, LossWeights};
use mixsplat::math::{quat_normalize, quat_to_mat, Mat3, Vec3, IDENTITY_QUAT};
use mixsplat::meshing::{extract_mesh, render_fusion_inputs, sphere_distance, tsdf_fuse, VolumeParams};
use mixsplat::project::{evaluate_child, evaluate_surfel, project_all, PixelRect, ProjectedSplat, SplatGeometry};
use mixsplat::raster::{render, render_primitives, PrimitiveSet, RasterConfig, RenderMode};
use mixsplat::rig::{child_to_global, frame_from_vertices, surfel_to_global, GlobalGaussian, PerturbationField, PrimitiveKind};
use mixsplat::scene::{Child3D, Scene, Surfel2D, Vec2};
use mixsplat::selection::{run_selection, select_iteration, TileErrorMap};
use mixsplat::synthetic::{patch_config, quad_config, surfel_sphere, textured_quad, view_dependent_quad};
use mixsplat::train::{evaluate, finish_pipeline, run_pipeline, run_stage1, Outputs, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn pool(threads: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool")
}

// ---------------------------------------------------------------- oracle

fn project_one(g: &GlobalGaussian, cam: &Camera, alpha_min: f64) -> Option<ProjectedSplat> {
    project_all(std::slice::from_ref(g), cam, alpha_min).pop()
}

/// Per-pixel compositing over the full primitive list without tiles or keys.
fn oracle(set: &PrimitiveSet, cam: &Camera, cfg: &RasterConfig) -> (Image, Image) {
    let proj: Vec<Option<ProjectedSplat>> = set.globals.iter().map(|g| project_one(g, cam, cfg.alpha_min)).collect();
    let mut child_of = vec![None; proj.len()];
    let mut order = Vec::new();
    for (i, p) in proj.iter().enumerate() {
        let Some(p) = p else { continue };
        match set.parent[i] {
            Some(par) if proj[par as usize].is_some() => child_of[par as usize] = Some(i),
            _ => order.push((depth_bits(p.depth), i)),
        }
    }
    order.sort();
    let (w, h) = (cam.width, cam.height);
    let mut color = Image::new(w, h, 3);
    let mut alpha = Image::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut t = 1.0;
            let mut c = Vec3::zeros();
            // Returns true when compositing stops.
            let blend = |i: usize, t: &mut f64, c: &mut Vec3| -> bool {
                let s = proj[i].as_ref().unwrap();
                let g = match s.geometry {
                    SplatGeometry::Surfel { .. } => match evaluate_surfel(s, px, py) {
                        Some(e) if e.depth > 0.0 => e.g,
                        _ => return false,
                    },
                    SplatGeometry::Child { .. } => evaluate_child(s, px, py).unwrap().0,
                };
                let a = s.opacity * g;
                if a < cfg.alpha_min {
                    return false;
                }
                *c += s.color * a * *t;
                *t *= 1.0 - a;
                *t < cfg.t_min
            };
            for &(_, i) in &order {
                if blend(i, &mut t, &mut c) {
                    break;
                }
                if let Some(j) = child_of[i] {
                    if blend(j, &mut t, &mut c) {
                        break;
                    }
                }
            }
            c += cfg.background * t;
            let p = (y * w + x) as usize;
            color.pixel_mut(p).copy_from_slice(c.as_slice());
            alpha.data[p] = 1.0 - t;
        }
    }
    (color, alpha)
}

fn max_abs_diff(a: &Image, b: &Image) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn half_camera(cam: &Camera) -> Camera {
    let mut c = cam.clone();
    c.k = Mat3::from_diagonal(&Vec3::new(0.5, 0.5, 1.0)) * cam.k;
    c.width = cam.width / 2;
    c.height = cam.height / 2;
    c
}

fn facing_surfel(mu: Vec3, s: f64, opacity: f64, dc: Vec3, source: u32) -> GlobalGaussian {
    GlobalGaussian {
        mu,
        rotation: Mat3::identity(),
        scale: Vec3::new(s, s, 0.0),
        opacity,
        sh: vec![dc],
        kind: PrimitiveKind::Surfel,
        source,
    }
}

fn single_child_case() -> Result<f64, String> {
    let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), -Vec3::y(), 8.0, 8, 8);
    let k = facing_surfel(Vec3::new(0.0, 0.0, -0.5), 0.6, 0.5, Vec3::new(0.8, 0.1, 0.1), 0);
    let b = facing_surfel(Vec3::new(0.0, 0.0, 0.0), 0.6, 0.6, Vec3::new(0.1, 0.8, 0.1), 1);
    // Behind b in depth, yet composited directly after its parent k.
    let j = GlobalGaussian {
        mu: Vec3::new(0.05, 0.0, 0.5),
        rotation: Mat3::identity(),
        scale: Vec3::new(0.3, 0.2, 0.25),
        opacity: 0.7,
        sh: vec![Vec3::new(0.1, 0.1, 0.8)],
        kind: PrimitiveKind::Child,
        source: 0,
    };
    let set = PrimitiveSet {
        globals: vec![k.clone(), b.clone(), j.clone()],
        parent: vec![None, None, Some(0)],
    };
    let cfg = RasterConfig {
        tile_size: 4,
        background: Vec3::new(0.2, 0.3, 0.4),
        ..Default::default()
    };
    let out = render_primitives(set, &cam, &cfg).map_err(err)?;
    let (px, py) = (4.5, 3.5);
    let pk = project_one(&k, &cam, cfg.alpha_min).ok_or("k culled")?;
    let pb = project_one(&b, &cam, cfg.alpha_min).ok_or("b culled")?;
    let pj = project_one(&j, &cam, cfg.alpha_min).ok_or("j culled")?;
    let ak = pk.opacity * evaluate_surfel(&pk, px, py).unwrap().g;
    let ab = pb.opacity * evaluate_surfel(&pb, px, py).unwrap().g;
    let aj = pj.opacity * evaluate_child(&pj, px, py).unwrap().0;
    ensure(pj.depth > pb.depth && pb.depth > pk.depth, "depth order of the test setup")?;
    let expected = pk.color * ak
        + pj.color * aj * (1.0 - ak)
        + pb.color * ab * (1.0 - ak) * (1.0 - aj)
        + cfg.background * (1.0 - ak) * (1.0 - aj) * (1.0 - ab);
    let p = (3 * 8 + 4) as usize;
    let got = Vec3::from_column_slice(out.color.pixel(p));
    Ok((got - expected).amax())
}

fn c1_oracle() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..500u64 {
        let (scene, mesh, cam) = random_scene(seed, 7, 3);
        let cam = half_camera(&cam);
        let cfg = RasterConfig {
            tile_size: 4,
            background: Vec3::new(0.1, 0.2, 0.3),
            ..Default::default()
        };
        let set = PrimitiveSet::from_scene(&scene, &mesh, 0, RenderMode::Mixed).map_err(err)?;
        let (oc, oa) = oracle(&set, &cam, &cfg);
        let out = render_primitives(set, &cam, &cfg).map_err(err)?;
        let d = max_abs_diff(&out.color, &oc).max(max_abs_diff(&out.alpha, &oa));
        worst = worst.max(d);
        ensure(d <= 1e-12, format!("scene {seed}: max diff {d:e}"))?;
    }
    let sym = single_child_case()?;
    ensure(sym <= 1e-12, format!("single-child case diff {sym:e}"))?;
    let el = start.elapsed();
    ensure(el < Duration::from_secs(30), format!("took {el:?}"))?;
    Ok(format!("500 scenes max diff {worst:.1e}, single child {sym:.1e}, {:.1}s", el.as_secs_f64()))
}

// ------------------------------------------------------------- gradcheck

fn c2_gradcheck() -> Check {
    let start = Instant::now();
    let cfg = GradcheckConfig::default();
    let mut total = GradcheckReport::default();
    for (mask, mode) in [(GradMask::stage1(), RenderMode::Surfels), (GradMask::stage2(false), RenderMode::Mixed)] {
        for seed in 0..100u64 {
            let (scene, mesh, cam) = random_scene(seed, 8, 4);
            let raster = RasterConfig {
                tile_size: 8,
                trace: mode == RenderMode::Surfels,
                ..Default::default()
            };
            let probe = ProbeLoss::new(cam.width, cam.height, seed);
            total.merge(&check_scene(&scene, &mesh, 0, &cam, mode, &raster, mask, &probe, &cfg).map_err(err)?);
        }
    }
    let missing: Vec<&str> = ParamClass::ALL
        .iter()
        .filter(|c| total.classes.get(c).is_none_or(|r| r.compared == 0))
        .map(|c| c.name())
        .collect();
    ensure(missing.is_empty(), format!("classes never compared: {missing:?}"))?;
    ensure(total.passed(), format!("failures: {:?}\n{}", total.failures, total.summary()))?;
    let el = start.elapsed();
    ensure(el < Duration::from_secs(300), format!("took {el:?}"))?;
    let compared: usize = total.classes.values().map(|c| c.compared).sum();
    Ok(format!(
        "{compared} entries in 12 classes, max rel err {:.2e}, {:.1}s",
        total.max_rel_err(),
        el.as_secs_f64()
    ))
}

// ------------------------------------------------------------------ keys

fn c3_keys() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = TileGrid::new(256, 192, 16).map_err(err)?;
    let n = 100_000;
    let mut rects = Vec::with_capacity(n);
    let mut depths = Vec::with_capacity(n);
    for _ in 0..n {
        let x0 = rng.random_range(0..256u32);
        let y0 = rng.random_range(0..192u32);
        let x1 = (x0 + rng.random_range(0..40u32)).min(256);
        let y1 = (y0 + rng.random_range(0..40u32)).min(192);
        rects.push(PixelRect { x0, y0, x1, y1 });
        // Coarse values force ties.
        let d: f32 = if rng.random_bool(0.2) {
            rng.random_range(0..8) as f32 * 0.5
        } else {
            rng.random_range(-5.0f32..50.0)
        };
        depths.push(d as f64);
    }
    let b = build_splat_buffer(&rects, &depths, grid).map_err(err)?;
    let mut reference: Vec<(u32, f32, u32)> = Vec::new();
    for (i, r) in rects.iter().enumerate() {
        for t in grid.tiles_overlapping(r) {
            reference.push((t, depths[i] as f32, i as u32));
        }
    }
    reference.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
    let got: Vec<u32> = b.point_list.clone();
    let want: Vec<u32> = reference.iter().map(|r| r.2).collect();
    ensure(got == want, "point list differs from the tuple sort")?;
    for t in 0..grid.num_tiles() as u32 {
        let ids: Vec<u32> = b.range(t).map(|e| b.point_list[e]).collect();
        let exp: Vec<u32> = reference.iter().filter(|r| r.0 == t).map(|r| r.2).collect();
        ensure(ids == exp, format!("tile {t} range differs"))?;
    }

    // Three-tile example: tiles 1 and 2 of a 48x16 image.
    let grid = TileGrid::new(48, 16, 16).map_err(err)?;
    let sources = [235u32, 234, 127, 12];
    let rects = [
        PixelRect { x0: 16, y0: 0, x1: 20, y1: 4 },
        PixelRect { x0: 16, y0: 0, x1: 40, y1: 4 },
        PixelRect { x0: 36, y0: 0, x1: 40, y1: 4 },
        PixelRect { x0: 0, y0: 0, x1: 4, y1: 4 },
    ];
    let fb = build_splat_buffer(&rects, &[1.0, 2.0, 0.5, 1.0], grid).map_err(err)?;
    let mut decoded = BTreeSet::new();
    for t in [1, 2] {
        decoded.extend(fb.range(t).map(|e| sources[fb.point_list[e] as usize]));
    }
    ensure(decoded == BTreeSet::from([235, 234, 127]), format!("decoded {decoded:?}"))?;
    Ok(format!("{} keys match, example decodes to {decoded:?}", b.keys.len()))
}

// ------------------------------------------------------------- transforms

fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    quat_normalize(&[
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    ])
}

fn rv(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

fn random_surfel(rng: &mut ChaCha8Rng) -> Surfel2D {
    Surfel2D {
        mu_l: rv(rng, 0.5),
        rot_l: random_quat(rng),
        s_l: Vec2::new(rng.random_range(-2.0..0.0), rng.random_range(-2.0..0.0)),
        opacity_raw: 0.0,
        sh: vec![Vec3::zeros()],
        parent_tri: 0,
        child: Some(0),
    }
}

fn random_child(rng: &mut ChaCha8Rng) -> Child3D {
    Child3D {
        mu_l: rv(rng, 0.3),
        rot_l: random_quat(rng),
        s_l: Vec3::new(rng.random_range(-2.0..0.0), rng.random_range(-2.0..0.0), rng.random_range(-2.0..0.0)),
        opacity_raw: 0.0,
        sh: vec![Vec3::zeros()],
        parent_surfel: 0,
    }
}

fn c4_transforms() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pf = PerturbationField::zeros(1, 1);
    let (mut orth, mut equi, mut lin) = (0.0f64, 0.0f64, 0.0f64);
    let mut tested = 0;
    while tested < 1000 {
        let v = [rv(&mut rng, 2.0), rv(&mut rng, 2.0), rv(&mut rng, 2.0)];
        let Some(f) = frame_from_vertices(&v[0], &v[1], &v[2]) else { continue };
        if (v[1] - v[0]).cross(&(v[2] - v[0])).norm() < 1e-3 {
            continue;
        }
        tested += 1;
        let r = f.rotation;
        orth = orth.max((r.transpose() * r - Mat3::identity()).amax()).max((r.determinant() - 1.0).abs());

        let s = random_surfel(&mut rng);
        let c = random_child(&mut rng);
        let gs = surfel_to_global(&s, 0, &f, &pf, 0);
        let gc = child_to_global(&c, 0, &gs.mu, &f, &pf, 0);

        let q = quat_to_mat(&random_quat(&mut rng));
        let tr = rv(&mut rng, 3.0);
        let w: Vec<Vec3> = v.iter().map(|p| q * p + tr).collect();
        let f2 = frame_from_vertices(&w[0], &w[1], &w[2]).ok_or("rigid copy degenerate")?;
        let gs2 = surfel_to_global(&s, 0, &f2, &pf, 0);
        let gc2 = child_to_global(&c, 0, &gs2.mu, &f2, &pf, 0);
        for (a, b) in [(&gs, &gs2), (&gc, &gc2)] {
            equi = equi
                .max((q * a.mu + tr - b.mu).amax())
                .max((q * a.rotation - b.rotation).amax())
                .max((a.scale - b.scale).amax());
        }

        let k = rng.random_range(0.2..5.0);
        let u: Vec<Vec3> = v.iter().map(|p| p * k).collect();
        let f3 = frame_from_vertices(&u[0], &u[1], &u[2]).ok_or("scaled copy degenerate")?;
        let gs3 = surfel_to_global(&s, 0, &f3, &pf, 0);
        let gc3 = child_to_global(&c, 0, &gs3.mu, &f3, &pf, 0);
        for (a, b) in [(&gs, &gs3), (&gc, &gc3)] {
            lin = lin
                .max((a.mu * k - b.mu).amax() / k.max(1.0))
                .max((a.scale * k - b.scale).amax() / k.max(1.0))
                .max((a.rotation - b.rotation).amax());
        }

        let mut z = s.clone();
        z.mu_l = Vec3::zeros();
        z.rot_l = IDENTITY_QUAT;
        let gz = surfel_to_global(&z, 0, &f, &pf, 0);
        ensure(gz.mu == f.centroid, "zero offset does not land on the centroid")?;
        ensure(gz.rotation == f.rotation, "identity rotation changes the frame")?;
        let mut cz = c.clone();
        cz.mu_l = Vec3::zeros();
        let gcz = child_to_global(&cz, 0, &gz.mu, &f, &pf, 0);
        ensure(gcz.mu == gz.mu, "zero child offset does not land on the parent")?;
    }
    ensure(orth <= 1e-6, format!("orthonormality error {orth:e}"))?;
    ensure(equi <= 1e-5, format!("rigid equivariance error {equi:e}"))?;
    ensure(lin <= 1e-6, format!("scale linearity error {lin:e}"))?;
    Ok(format!("orth {orth:.1e}, rigid {equi:.1e}, scale {lin:.1e}, zero cases exact"))
}

// ----------------------------------------------------------------- losses

fn c5_losses() -> Check {
    let w = LossWeights::default();
    let consts = [
        (w.lambda1, 0.01),
        (w.lambda2, 1.0),
        (w.lambda3, 1000.0),
        (w.lambda4, 0.05),
        (w.lambda5, 0.01),
        (w.eps_pos, 1.0),
        (w.eps_sca, 0.6),
        (w.eps_dis, 1.0),
    ];
    ensure(consts.iter().all(|(a, b)| a == b), format!("default weights {w:?}"))?;
    let terms = LossTerms {
        depth: 0.001,
        ..Default::default()
    };
    let total = total_stage1(&terms, &w);
    ensure(total == 1.0, format!("depth term 0.001 gives total {total}"))?;

    let ds = textured_quad(16, 1);
    let mut scene = Scene::from_mesh(&ds.mesh, 0).map_err(err)?;
    scene.spawn_children(&BTreeSet::from([0, 1])).map_err(err)?;
    scene.surfels[0].mu_l = Vec3::new(0.5, -0.9, 0.99);
    scene.surfels[1].mu_l = Vec3::new(1.5, 0.2, -3.0);
    scene.surfels[0].s_l = Vec2::new(0.5f64.ln(), 0.59f64.ln());
    scene.surfels[1].s_l = Vec2::new(0.9f64.ln(), 0.3f64.ln());
    scene.children[0].mu_l = Vec3::new(0.9, 0.0, 0.3);
    scene.children[1].mu_l = Vec3::new(0.1, 2.0, 0.0);
    let (_, gp) = pos_loss(&scene, w.eps_pos);
    let (_, gs) = sca_loss(&scene, w.eps_sca);
    let (_, gd) = dis_loss(&scene, 0, w.eps_dis);
    ensure(gp[0] == Vec3::zeros(), format!("pos gradient below eps {:?}", gp[0]))?;
    ensure(gp[1].x != 0.0 && gp[1].y == 0.0 && gp[1].z == 0.0, format!("pos gradient {:?}", gp[1]))?;
    ensure(gs[0] == Vec2::zeros(), format!("scale gradient below eps {:?}", gs[0]))?;
    ensure(gs[1].x != 0.0 && gs[1].y == 0.0, format!("scale gradient {:?}", gs[1]))?;
    ensure(gd[0] == Vec3::zeros(), format!("displacement gradient below eps {:?}", gd[0]))?;
    ensure(gd[1].y != 0.0 && gd[1].x == 0.0 && gd[1].z == 0.0, format!("displacement gradient {:?}", gd[1]))?;
    Ok("weights and clamps as configured; 1000 x 0.001 = 1".into())
}

// ------------------------------------------------------------------- quad

struct Quad {
    ds: Dataset,
    scene: Scene,
}

fn c6_quad(slot: &mut Option<Quad>) -> Check {
    let start = Instant::now();
    let ds = textured_quad(64, 4);
    let mut cfg = quad_config();
    cfg.seed = 0;
    cfg.checkpoint_every = 50;
    let dir = tempfile::tempdir().map_err(err)?;
    let out = Outputs {
        dir: Some(dir.path().to_path_buf()),
    };
    let res = pool(1).install(|| run_pipeline(&ds, &cfg, &out)).map_err(err)?;
    let el = start.elapsed();
    let raster = cfg.raster(false);
    let test = evaluate(&res.scene, &ds.mesh, &ds.test, RenderMode::Mixed, &raster).map_err(err)?;
    let mut trend = vec![evaluate(
        &Scene::from_mesh(&ds.mesh, cfg.sh_degree).map_err(err)?,
        &ds.mesh,
        &ds.train,
        RenderMode::Surfels,
        &raster,
    )
    .map_err(err)?];
    for step in [50, 100, 150, 200] {
        let s = load_scene(&dir.path().join(format!("checkpoints/stage1_{step:06}.mxgs"))).map_err(err)?;
        trend.push(evaluate(&s, &ds.mesh, &ds.train, RenderMode::Surfels, &raster).map_err(err)?);
    }
    let stage1 = load_scene(&dir.path().join(format!("checkpoints/stage1_{:06}.mxgs", cfg.stage1_steps))).map_err(err)?;
    *slot = Some(Quad { ds, scene: stage1 });
    ensure(test > 30.0, format!("test PSNR {test:.2} dB"))?;
    ensure(trend.windows(2).all(|w| w[1] > w[0]), format!("PSNR over steps 0..200 not increasing: {trend:.2?}"))?;
    ensure(el < Duration::from_secs(600), format!("took {el:?}"))?;
    Ok(format!("test PSNR {test:.2} dB, steps 0-200 {trend:.2?}, {:.0}s single-threaded", el.as_secs_f64()))
}

// ------------------------------------------------------------------ patch

fn c7_patch() -> Check {
    let start = Instant::now();
    let ds = view_dependent_quad(64);
    let cfg = patch_config();
    let stage1 = run_stage1(&ds, &cfg, &Outputs::default()).map_err(err)?;
    let raster = cfg.raster(false);
    let base = evaluate(&stage1.scene, &ds.mesh, &ds.test, RenderMode::Surfels, &raster).map_err(err)?;
    let mut off = cfg.clone();
    off.disable_children = true;
    let r_off = finish_pipeline(&ds, &off, stage1.clone(), &Outputs::default()).map_err(err)?;
    let p_off = evaluate(&r_off.scene, &ds.mesh, &ds.test, RenderMode::Mixed, &raster).map_err(err)?;
    let r_on = finish_pipeline(&ds, &cfg, stage1, &Outputs::default()).map_err(err)?;
    let p_on = evaluate(&r_on.scene, &ds.mesh, &ds.test, RenderMode::Mixed, &raster).map_err(err)?;
    let el = start.elapsed();
    let (gain, diff) = (p_on - base, p_off - base);
    let detail = format!(
        "surfels-only {base:.2} dB, no children {p_off:.2} ({diff:+.3}), mixed {p_on:.2} ({gain:+.3}), {} selected, {:.0}s",
        r_on.selected.len(),
        el.as_secs_f64()
    );
    ensure(gain >= 0.5, format!("gain below 0.5 dB: {detail}"))?;
    ensure(diff.abs() <= 0.1, format!("disabling children moves PSNR by more than 0.1 dB: {detail}"))?;
    ensure(el < Duration::from_secs(900), format!("took too long: {detail}"))?;
    Ok(detail)
}

// -------------------------------------------------------------- selection

fn c8_selection(quad: Option<&Quad>) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = TileGrid::new(80, 48, 8).map_err(err)?;
    for _ in 0..200 {
        let values: Vec<f64> = (0..grid.num_tiles()).map(|_| rng.random_range(0..6) as f64).collect();
        let map = TileErrorMap { grid, values };
        let mut full: Vec<u32> = (0..map.values.len() as u32).collect();
        full.sort_by(|&a, &b| map.values[b as usize].partial_cmp(&map.values[a as usize]).unwrap().then(a.cmp(&b)));
        for k in [0, 1, 5, 17, 60, 100] {
            let want: Vec<u32> = full.iter().copied().take(k).collect();
            ensure(map.top_k(k) == want, format!("top-{k} differs from the full sort"))?;
        }
    }

    let q = quad.ok_or("needs the converged quad from the quad criterion")?;
    let (scene, ds) = (&q.scene, &q.ds);
    for _ in 0..100 {
        let s: BTreeSet<u32> = (0..rng.random_range(0..10))
            .map(|_| rng.random_range(0..scene.surfels.len() as u32))
            .collect();
        let c1 = scene.tree.sibling_closure(&scene.surfels, &s);
        let c2 = scene.tree.sibling_closure(&scene.surfels, &c1);
        ensure(c1.is_superset(&s) && c1 == c2, "sibling closure is not an idempotent superset")?;
    }

    let raster = RasterConfig::default();
    let mut prev = BTreeSet::new();
    for n in 1..=6 {
        let mut sampler = RandomViews::new(&ds.train, 11);
        let u = run_selection(scene, &ds.mesh, &mut sampler, n, 2, &raster).map_err(err)?;
        ensure(u.is_superset(&prev), format!("selection for n = {n} drops surfels"))?;
        prev = u;
    }

    // Corrupt a block touching four tiles of one training view.
    let v = &ds.train[0];
    let mut truth = v.image.clone();
    let block = PixelRect { x0: 24, y0: 24, x1: 40, y1: 40 };
    for y in block.y0..block.y1 {
        for x in block.x0..block.x1 {
            let i = truth.index(x, y);
            truth.data[i..i + 3].copy_from_slice(&[1.0, 0.0, 1.0]);
        }
    }
    let sel = select_iteration(scene, &ds.mesh, v.frame, &v.camera, &truth, 4, &raster).map_err(err)?;
    let tg = TileGrid::new(v.camera.width, v.camera.height, raster.tile_size).map_err(err)?;
    let hit: BTreeSet<u32> = tg.tiles_overlapping(&block).collect();
    let inside = sel.tiles.iter().filter(|t| hit.contains(t)).count();
    let frac = inside as f64 / sel.tiles.len().max(1) as f64;
    ensure(frac >= 0.9, format!("only {inside}/{} selected tiles touch the corrupted block", sel.tiles.len()))?;
    let out = render(scene, &ds.mesh, v.frame, &v.camera, RenderMode::Surfels, &raster).map_err(err)?;
    ensure(!sel.s.is_empty() && out.cache.contributed.iter().any(|&c| c), "no contributors selected")?;
    Ok(format!(
        "top-k exact, closure idempotent, union monotone over n, {inside}/{} tiles on the corruption",
        sel.tiles.len()
    ))
}

// ----------------------------------------------------------------- sphere

fn c9_sphere() -> Check {
    let start = Instant::now();
    let (ds, scene) = surfel_sphere(128).map_err(err)?;
    let raster = RasterConfig::default();
    let views = ds.train_cameras();
    let inputs = render_fusion_inputs(&scene, &ds.mesh, &views, &raster).map_err(err)?;
    let params = VolumeParams::covering(&Vec3::repeat(-1.0), &Vec3::repeat(1.0), 128, 4.0, 6).map_err(err)?;
    let vol = tsdf_fuse(&inputs, params).map_err(err)?;
    let mesh = extract_mesh(&vol, 0);
    let (mean, max) = sphere_distance(&mesh, &Vec3::zeros(), 1.0);
    let voxel = params.voxel_size;
    let mut rev = inputs.clone();
    rev.reverse();
    let vol2 = tsdf_fuse(&rev, params).map_err(err)?;
    let order = vol
        .tsdf_sum
        .iter()
        .zip(&vol2.tsdf_sum)
        .chain(vol.weight.iter().zip(&vol2.weight))
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let el = start.elapsed();
    ensure(!mesh.triangles.is_empty(), "empty mesh")?;
    ensure(mean < voxel, format!("mean distance {mean:.4} vs voxel {voxel:.4}"))?;
    ensure(order < 1e-6, format!("fusion order changes the volume by {order:e}"))?;
    ensure(el < Duration::from_secs(120), format!("took {el:?}"))?;
    Ok(format!(
        "{} faces, mean distance {:.3} voxel (max {:.3}), order diff {order:.1e}, {:.1}s",
        mesh.triangles.len(),
        mean / voxel,
        max / voxel,
        el.as_secs_f64()
    ))
}

// ------------------------------------------------------------ determinism

fn checkpoint_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir.join("checkpoints")).map_err(err)? {
        let p = e.map_err(err)?.path();
        files.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).map_err(err)?));
    }
    files.sort();
    Ok(files)
}

fn c10_determinism() -> Check {
    let ds = textured_quad(32, 3);
    let cfg = TrainConfig {
        seed: 5,
        stage1_steps: 120,
        stage2_steps: 40,
        checkpoint_every: 40,
        ..quad_config()
    };
    let mut cfg = cfg;
    cfg.densify.start = 20;
    cfg.densify.interval = 20;
    cfg.selection.n = 3;
    cfg.selection.k = 2;
    let mut runs = Vec::new();
    for threads in [1, 1, 4] {
        let dir = tempfile::tempdir().map_err(err)?;
        let out = Outputs {
            dir: Some(dir.path().to_path_buf()),
        };
        let r = pool(threads).install(|| run_pipeline(&ds, &cfg, &out)).map_err(err)?;
        runs.push((scene_to_bytes(&r.scene), checkpoint_bytes(dir.path())?, r.selected));
    }
    ensure(runs[0].1.len() == 4, format!("expected 4 checkpoints, found {}", runs[0].1.len()))?;
    ensure(runs[0] == runs[1], "two single-threaded runs differ")?;
    ensure(runs[0] == runs[2], "1 and 4 threads differ")?;
    Ok(format!(
        "scene ({} bytes) and {} checkpoints identical across reruns and thread counts",
        runs[0].0.len(),
        runs[0].1.len()
    ))
}

fn main() {
    let mut quad = None;
    let mut failed = 0;
    let mut report = |id: usize, name: &str, r: Check| {
        match r {
            Ok(d) => println!("PASS {id:>2} {name}: {d}"),
            Err(e) => {
                failed += 1;
                println!("FAIL {id:>2} {name}: {e}");
            }
        }
    };
    report(1, "rasterizer matches brute-force compositing", c1_oracle());
    report(2, "analytic gradients match finite differences", c2_gradcheck());
    report(3, "tile-depth keys match tuple sort", c3_keys());
    report(4, "rig transforms", c4_transforms());
    report(5, "loss weights and clamps", c5_losses());
    report(6, "textured quad reconstruction", c6_quad(&mut quad));
    report(7, "children on the view-dependent patch", c7_patch());
    report(8, "error-guided selection", c8_selection(quad.as_ref()));
    report(9, "sphere mesh extraction", c9_sphere());
    report(10, "determinism", c10_determinism());
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
