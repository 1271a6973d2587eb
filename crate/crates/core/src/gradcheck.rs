//! Central finite-difference check of the analytic backward pass, using the
//! five-point stencil at step `h`.
//!
//! A fixed linear probe loss over color, alpha, median depth and the surfel
//! trace is differentiated both ways. Entries whose perturbation changes the
//! discrete forward state (contributor set, filter branch, color clamp,
//! culling, median contributor) sit on a kink and are excluded and counted.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backward::{backward, GradBuffer, GradMask, TraceGrad, Upstream};
use crate::camera::Camera;
use crate::error::Result;
use crate::image::Image;
use crate::math::{quat_normalize, Vec3};
use crate::project::SurfelBranch;
use crate::raster::{median_term, render, traverse_pixel, RasterConfig, RenderMode, RenderOutput, TermEval};
use crate::rig::PerturbationField;
use crate::scene::{Child3D, GaussianTree, RiggedMesh, Scene, Surfel2D, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamClass {
    SurfelMu,
    SurfelRot,
    SurfelScale,
    SurfelOpacity,
    SurfelSh,
    SurfelP2d,
    ChildMu,
    ChildRot,
    ChildScale,
    ChildOpacity,
    ChildSh,
    ChildP3d,
}

impl ParamClass {
    pub const ALL: [ParamClass; 12] = [
        ParamClass::SurfelMu,
        ParamClass::SurfelRot,
        ParamClass::SurfelScale,
        ParamClass::SurfelOpacity,
        ParamClass::SurfelSh,
        ParamClass::SurfelP2d,
        ParamClass::ChildMu,
        ParamClass::ChildRot,
        ParamClass::ChildScale,
        ParamClass::ChildOpacity,
        ParamClass::ChildSh,
        ParamClass::ChildP3d,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamClass::SurfelMu => "surfel.mu_l",
            ParamClass::SurfelRot => "surfel.rot_l",
            ParamClass::SurfelScale => "surfel.s_l",
            ParamClass::SurfelOpacity => "surfel.opacity",
            ParamClass::SurfelSh => "surfel.sh",
            ParamClass::SurfelP2d => "surfel.p2d",
            ParamClass::ChildMu => "child.mu_l",
            ParamClass::ChildRot => "child.rot_l",
            ParamClass::ChildScale => "child.s_l",
            ParamClass::ChildOpacity => "child.opacity",
            ParamClass::ChildSh => "child.sh",
            ParamClass::ChildP3d => "child.p3d",
        }
    }

    pub fn is_child(&self) -> bool {
        *self >= ParamClass::ChildMu
    }

    pub fn in_mask(&self, m: &GradMask) -> bool {
        match self {
            ParamClass::SurfelMu | ParamClass::SurfelRot | ParamClass::SurfelScale => m.surfel_geometry,
            ParamClass::SurfelOpacity => m.surfel_opacity,
            ParamClass::SurfelSh => m.surfel_sh,
            ParamClass::SurfelP2d => m.surfel_perturb,
            _ => m.children,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamRef {
    pub class: ParamClass,
    pub prim: usize,
    pub comp: usize,
}

pub fn enumerate_params(scene: &Scene) -> Vec<ParamRef> {
    let nsh = 3 * crate::sh::num_coeffs(scene.sh_degree);
    let mut out = Vec::new();
    let mut push = |class, n: usize, comps: usize| {
        for prim in 0..n {
            for comp in 0..comps {
                out.push(ParamRef { class, prim, comp });
            }
        }
    };
    let ns = scene.surfels.len();
    let nc = scene.children.len();
    push(ParamClass::SurfelMu, ns, 3);
    push(ParamClass::SurfelRot, ns, 4);
    push(ParamClass::SurfelScale, ns, 2);
    push(ParamClass::SurfelOpacity, ns, 1);
    push(ParamClass::SurfelSh, ns, nsh);
    push(ParamClass::SurfelP2d, ns, 3);
    push(ParamClass::ChildMu, nc, 3);
    push(ParamClass::ChildRot, nc, 4);
    push(ParamClass::ChildScale, nc, 3);
    push(ParamClass::ChildOpacity, nc, 1);
    push(ParamClass::ChildSh, nc, nsh);
    push(ParamClass::ChildP3d, nc, 3);
    out
}

/// Mutable access to one raw scalar parameter. Perturbations refer to the
/// frame-independent base offsets.
pub fn param_mut<'a>(scene: &'a mut Scene, r: &ParamRef) -> &'a mut f64 {
    let (i, c) = (r.prim, r.comp);
    match r.class {
        ParamClass::SurfelMu => &mut scene.surfels[i].mu_l[c],
        ParamClass::SurfelRot => &mut scene.surfels[i].rot_l[c],
        ParamClass::SurfelScale => &mut scene.surfels[i].s_l[c],
        ParamClass::SurfelOpacity => &mut scene.surfels[i].opacity_raw,
        ParamClass::SurfelSh => &mut scene.surfels[i].sh[c / 3][c % 3],
        ParamClass::SurfelP2d => &mut scene.perturb.p2d[i][c],
        ParamClass::ChildMu => &mut scene.children[i].mu_l[c],
        ParamClass::ChildRot => &mut scene.children[i].rot_l[c],
        ParamClass::ChildScale => &mut scene.children[i].s_l[c],
        ParamClass::ChildOpacity => &mut scene.children[i].opacity_raw,
        ParamClass::ChildSh => &mut scene.children[i].sh[c / 3][c % 3],
        ParamClass::ChildP3d => &mut scene.perturb.p3d[i][c],
    }
}

pub fn grad_of(g: &GradBuffer, r: &ParamRef) -> f64 {
    let (i, c) = (r.prim, r.comp);
    match r.class {
        ParamClass::SurfelMu => g.surfels[i].mu_l[c],
        ParamClass::SurfelRot => g.surfels[i].rot_l[c],
        ParamClass::SurfelScale => g.surfels[i].s_l[c],
        ParamClass::SurfelOpacity => g.surfels[i].opacity_raw,
        ParamClass::SurfelSh => g.surfels[i].sh[c / 3][c % 3],
        ParamClass::SurfelP2d => g.surfels[i].p2d[c],
        ParamClass::ChildMu => g.children[i].mu_l[c],
        ParamClass::ChildRot => g.children[i].rot_l[c],
        ParamClass::ChildScale => g.children[i].s_l[c],
        ParamClass::ChildOpacity => g.children[i].opacity_raw,
        ParamClass::ChildSh => g.children[i].sh[c / 3][c % 3],
        ParamClass::ChildP3d => g.children[i].p3d[c],
    }
}

/// Fixed random linear functional of the render outputs.
#[derive(Clone, Debug)]
pub struct ProbeLoss {
    color: Image,
    alpha: Image,
    median: Image,
    trace_coeff: Vec<[f64; 5]>,
}

impl ProbeLoss {
    pub fn new(width: u32, height: u32, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = |c: usize| {
            let mut i = Image::new(width, height, c);
            i.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            i
        };
        let color = img(3);
        let alpha = img(1);
        let median = img(1);
        let trace_coeff = (0..16)
            .map(|_| std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
            .collect();
        Self {
            color,
            alpha,
            median,
            trace_coeff,
        }
    }

    fn coeff(&self, p: usize, rank: usize) -> &[f64; 5] {
        &self.trace_coeff[(p * 7 + rank * 3) % self.trace_coeff.len()]
    }

    pub fn value(&self, out: &RenderOutput) -> f64 {
        let dot = |a: &Image, b: &Image| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
        let mut l = dot(&self.color, &out.color) + dot(&self.alpha, &out.alpha) + dot(&self.median, &out.median_depth);
        if let Some(tr) = &out.trace {
            for p in 0..tr.offsets.len() - 1 {
                for (r, t) in tr.pixel(p).iter().enumerate() {
                    let k = self.coeff(p, r);
                    l += k[0] * t.omega + k[1] * t.depth + k[2] * t.normal.x + k[3] * t.normal.y + k[4] * t.normal.z;
                }
            }
        }
        l
    }

    pub fn trace_grads(&self, out: &RenderOutput) -> Vec<TraceGrad> {
        let mut g = Vec::new();
        if let Some(tr) = &out.trace {
            for p in 0..tr.offsets.len() - 1 {
                for r in 0..tr.pixel(p).len() {
                    let k = self.coeff(p, r);
                    g.push(TraceGrad {
                        omega: k[0],
                        depth: k[1],
                        normal: Vec3::new(k[2], k[3], k[4]),
                    });
                }
            }
        }
        g
    }

    pub fn backward(
        &self,
        scene: &Scene,
        mesh: &RiggedMesh,
        t: u32,
        out: &RenderOutput,
        mask: GradMask,
    ) -> Result<GradBuffer> {
        let tg = self.trace_grads(out);
        let up = Upstream {
            color: Some(&self.color),
            alpha: Some(&self.alpha),
            median_depth: Some(&self.median),
            trace: out.trace.as_ref().map(|_| tg.as_slice()),
        };
        backward(scene, mesh, t, out, &up, mask)
    }
}

/// Discrete state of a forward pass; equal signatures mean the render is
/// smooth between the two parameter values.
pub fn forward_signature(out: &RenderOutput) -> Vec<u64> {
    let c = &out.cache;
    let mut sig = Vec::new();
    for (s, &gi) in c.view.splats.iter().zip(&c.view.global_index) {
        sig.push(gi as u64);
        sig.push(s.color_clamped.iter().enumerate().map(|(i, &b)| (b as u64) << i).sum());
    }
    let mut terms = Vec::new();
    let w = c.camera.width;
    for y in 0..c.camera.height {
        for x in 0..w {
            terms.clear();
            let tile = c.buffer.grid.tile_of_pixel(x, y);
            traverse_pixel(&c.view, &c.buffer, tile, x, y, &c.config, &mut terms).expect("replay");
            sig.push(u64::MAX);
            for tm in &terms {
                let branch = match tm.eval {
                    TermEval::Surfel(e) => match e.branch {
                        SurfelBranch::Object { .. } => 1,
                        SurfelBranch::LowPass => 2,
                    },
                    TermEval::Child(_) => 3,
                };
                sig.push(((c.view.global_index[tm.splat as usize] as u64) << 8) | branch);
            }
            sig.push(median_term(&terms).map(|m| m as u64).unwrap_or(u64::MAX - 1));
        }
    }
    sig
}

#[derive(Clone, Copy, Debug)]
pub struct GradcheckConfig {
    pub h: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Entries with both gradients below this are counted but not compared.
    pub min_grad: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            h: 1e-4,
            rel_tol: 1e-4,
            abs_tol: 1e-7,
            min_grad: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClassReport {
    pub checked: usize,
    pub compared: usize,
    pub failed: usize,
    pub kinks: usize,
    /// Masked-out entries whose analytic gradient was not exactly zero.
    pub mask_leaks: usize,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradcheckReport {
    pub classes: BTreeMap<ParamClass, ClassReport>,
    /// First few failures as (param, analytic, numeric).
    pub failures: Vec<(ParamRef, f64, f64)>,
}

impl GradcheckReport {
    pub fn merge(&mut self, o: &GradcheckReport) {
        for (k, v) in &o.classes {
            let e = self.classes.entry(*k).or_default();
            e.checked += v.checked;
            e.compared += v.compared;
            e.failed += v.failed;
            e.kinks += v.kinks;
            e.mask_leaks += v.mask_leaks;
            e.max_rel_err = e.max_rel_err.max(v.max_rel_err);
        }
        for f in &o.failures {
            if self.failures.len() < 20 {
                self.failures.push(*f);
            }
        }
    }

    pub fn passed(&self) -> bool {
        self.classes.values().all(|c| c.failed == 0 && c.mask_leaks == 0)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.classes.values().map(|c| c.max_rel_err).fold(0.0, f64::max)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for (k, c) in &self.classes {
            s.push_str(&format!(
                "{:<16} checked {:>6} compared {:>6} failed {:>3} kinks {:>4} mask-leaks {:>3} max-rel-err {:.3e}\n",
                k.name(),
                c.checked,
                c.compared,
                c.failed,
                c.kinks,
                c.mask_leaks,
                c.max_rel_err
            ));
        }
        s
    }
}

/// Checks every parameter of `scene` under `mask` against central differences.
#[allow(clippy::too_many_arguments)]
pub fn check_scene(
    scene: &Scene,
    mesh: &RiggedMesh,
    t: u32,
    cam: &Camera,
    mode: RenderMode,
    raster: &RasterConfig,
    mask: GradMask,
    probe: &ProbeLoss,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let out = render(scene, mesh, t, cam, mode, raster)?;
    let grads = probe.backward(scene, mesh, t, &out, mask)?;
    let base_sig = forward_signature(&out);
    let mut report = GradcheckReport::default();
    let mut work = scene.clone();
    for r in enumerate_params(scene) {
        let entry = report.classes.entry(r.class).or_default();
        let analytic = grad_of(&grads, &r);
        if !r.class.in_mask(&mask) {
            if analytic != 0.0 {
                entry.mask_leaks += 1;
            }
            continue;
        }
        if r.class.is_child() && mode == RenderMode::Surfels {
            continue;
        }
        entry.checked += 1;
        let x0 = *param_mut(&mut work, &r);
        let mut values = [0.0; 4];
        let mut kink = false;
        for (k, step) in [2.0, 1.0, -1.0, -2.0].into_iter().enumerate() {
            *param_mut(&mut work, &r) = x0 + step * cfg.h;
            let o = render(&work, mesh, t, cam, mode, raster)?;
            kink |= forward_signature(&o) != base_sig;
            values[k] = probe.value(&o);
        }
        *param_mut(&mut work, &r) = x0;
        if kink {
            entry.kinks += 1;
            continue;
        }
        let numeric = (-values[0] + 8.0 * values[1] - 8.0 * values[2] + values[3]) / (12.0 * cfg.h);
        if analytic.abs().max(numeric.abs()) <= cfg.min_grad {
            continue;
        }
        entry.compared += 1;
        let diff = (analytic - numeric).abs();
        let rel = diff / analytic.abs().max(numeric.abs());
        if diff > cfg.abs_tol {
            entry.max_rel_err = entry.max_rel_err.max(rel);
        }
        if diff > cfg.abs_tol && rel > cfg.rel_tol {
            entry.failed += 1;
            if report.failures.len() < 20 {
                report.failures.push((r, analytic, numeric));
            }
        }
    }
    Ok(report)
}

/// Small random scene in front of a 16x16 camera: up to `max_surfels`
/// surfels on three triangles and up to `max_children` children.
pub fn random_scene(seed: u64, max_surfels: usize, max_children: usize) -> (Scene, RiggedMesh, Camera) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    while triangles.len() < 3 {
        let c = Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.3..0.3));
        let v: Vec<Vec3> = (0..3)
            .map(|_| c + Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-0.2..0.2)))
            .collect();
        if (v[1] - v[0]).cross(&(v[2] - v[0])).norm() < 0.05 {
            continue;
        }
        let base = vertices.len() as u32;
        vertices.extend(v);
        triangles.push([base, base + 1, base + 2]);
    }
    let mesh = RiggedMesh::new_static(vertices, triangles);
    let sh_degree = 1;
    let nsh = crate::sh::num_coeffs(sh_degree);
    let sh = |rng: &mut ChaCha8Rng| -> Vec<Vec3> {
        (0..nsh)
            .map(|_| Vec3::new(rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)))
            .collect()
    };
    let quat = |rng: &mut ChaCha8Rng| {
        quat_normalize(&[
            rng.random_range(0.5..1.0),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        ])
    };
    let ns = rng.random_range(1..=max_surfels.max(1));
    let surfels: Vec<Surfel2D> = (0..ns)
        .map(|i| Surfel2D {
            mu_l: Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
            rot_l: quat(&mut rng),
            s_l: Vec2::new(rng.random_range(0.15f64..0.6).ln(), rng.random_range(0.15f64..0.6).ln()),
            opacity_raw: rng.random_range(-0.5..2.0),
            sh: sh(&mut rng),
            parent_tri: if i < 3 { i as u32 } else { rng.random_range(0..3) },
            child: None,
        })
        .collect();
    let tree = GaussianTree::build(3, &surfels);
    let mut scene = Scene {
        sh_degree,
        surfels,
        children: Vec::new(),
        tree,
        perturb: PerturbationField::zeros(ns, 0),
    };
    let nc = rng.random_range(0..=max_children.min(ns));
    let mut chosen = std::collections::BTreeSet::new();
    while chosen.len() < nc {
        chosen.insert(rng.random_range(0..ns as u32));
    }
    scene.spawn_children(&chosen).expect("fresh surfels");
    for c in scene.children.iter_mut() {
        *c = Child3D {
            mu_l: c.mu_l + Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)),
            rot_l: quat(&mut rng),
            s_l: Vec3::new(
                rng.random_range(0.1f64..0.4).ln(),
                rng.random_range(0.1f64..0.4).ln(),
                rng.random_range(0.1f64..0.4).ln(),
            ),
            opacity_raw: rng.random_range(-0.5..2.0),
            sh: sh(&mut rng),
            parent_surfel: c.parent_surfel,
        };
    }
    for p in scene.perturb.p2d.iter_mut().chain(scene.perturb.p3d.iter_mut()) {
        *p = Vec3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    }
    let eye = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), -2.5);
    let cam = Camera::look_at(eye, Vec3::zeros(), -Vec3::y(), 14.0, 16, 16);
    (scene, mesh, cam)
}
