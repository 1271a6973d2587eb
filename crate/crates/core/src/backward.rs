//! Reverse-mode gradients of a render with respect to scene parameters.
//!
//! Each pixel replays its forward traversal, then walks the composited terms
//! back to front with the recurrence
//! `B_{k-1} = e_k a_k + (1 - a_k) B_k`, `dL/da_k = T_k (e_k - B_k)`,
//! where `e_k` is the gradient on the term's weighted contribution and `B`
//! starts at the background term. A spliced child is therefore visited
//! before its parent. Per-primitive sums are kept per tile and merged in
//! tile order, so results do not depend on the worker count.

use std::collections::HashMap;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::{Mat3, Quat, Vec3};
use crate::project::{
    child_pixel_backward, child_project_backward, surfel_pixel_backward, surfel_project_backward, SplatGeometry,
};
use crate::raster::{median_term, traverse_pixel, ForwardCache, RenderOutput, Term, TermEval};
use crate::rig::{all_frames, global_backward, GlobalGrad, PrimitiveKind};
use crate::scene::{RiggedMesh, Scene, Vec2};

/// Which parameter groups receive gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GradMask {
    /// Surfel position, rotation and scale.
    pub surfel_geometry: bool,
    pub surfel_opacity: bool,
    pub surfel_sh: bool,
    pub surfel_perturb: bool,
    /// Every child parameter and the child perturbations.
    pub children: bool,
}

impl GradMask {
    pub fn stage1() -> Self {
        Self {
            surfel_geometry: true,
            surfel_opacity: true,
            surfel_sh: true,
            surfel_perturb: true,
            children: false,
        }
    }

    pub fn stage2(train_surfel_opacity: bool) -> Self {
        Self {
            surfel_geometry: false,
            surfel_opacity: train_surfel_opacity,
            surfel_sh: true,
            surfel_perturb: false,
            children: true,
        }
    }

    pub fn full() -> Self {
        Self {
            surfel_geometry: true,
            surfel_opacity: true,
            surfel_sh: true,
            surfel_perturb: true,
            children: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SurfelGrad {
    pub mu_l: Vec3,
    pub rot_l: Quat,
    pub s_l: Vec2,
    pub opacity_raw: f64,
    pub sh: Vec<Vec3>,
    pub p2d: Vec3,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChildGrad {
    pub mu_l: Vec3,
    pub rot_l: Quat,
    pub s_l: Vec3,
    pub opacity_raw: f64,
    pub sh: Vec<Vec3>,
    pub p3d: Vec3,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradBuffer {
    pub surfels: Vec<SurfelGrad>,
    pub children: Vec<ChildGrad>,
    /// Per surfel: norm of the loss gradient with respect to its projected
    /// center in normalized device coordinates (zero when not visible).
    pub screen_grad: Vec<f64>,
    /// Per surfel: half the larger side of its screen footprint in pixels.
    pub screen_radius: Vec<f64>,
    pub visible: Vec<bool>,
}

impl GradBuffer {
    pub fn zeros(scene: &Scene) -> Self {
        let nc = crate::sh::num_coeffs(scene.sh_degree);
        let ns = scene.surfels.len();
        Self {
            surfels: vec![
                SurfelGrad {
                    sh: vec![Vec3::zeros(); nc],
                    ..Default::default()
                };
                ns
            ],
            children: vec![
                ChildGrad {
                    sh: vec![Vec3::zeros(); nc],
                    ..Default::default()
                };
                scene.children.len()
            ],
            screen_grad: vec![0.0; ns],
            screen_radius: vec![0.0; ns],
            visible: vec![false; ns],
        }
    }

    pub fn all_finite(&self) -> bool {
        let v3 = |v: &Vec3| v.iter().all(|x| x.is_finite());
        let q = |q: &Quat| q.iter().all(|x| x.is_finite());
        self.surfels.iter().all(|s| {
            v3(&s.mu_l) && q(&s.rot_l) && s.s_l.iter().all(|x| x.is_finite()) && s.opacity_raw.is_finite()
                && s.sh.iter().all(v3) && v3(&s.p2d)
        }) && self.children.iter().all(|c| {
            v3(&c.mu_l) && q(&c.rot_l) && v3(&c.s_l) && c.opacity_raw.is_finite() && c.sh.iter().all(v3) && v3(&c.p3d)
        })
    }

    pub fn is_zero(&self) -> bool {
        let z3 = |v: &Vec3| v.iter().all(|&x| x == 0.0);
        self.surfels.iter().all(|s| {
            z3(&s.mu_l) && s.rot_l.iter().all(|&x| x == 0.0) && s.s_l.iter().all(|&x| x == 0.0)
                && s.opacity_raw == 0.0 && s.sh.iter().all(z3) && z3(&s.p2d)
        }) && self.children.iter().all(|c| {
            z3(&c.mu_l) && c.rot_l.iter().all(|&x| x == 0.0) && z3(&c.s_l) && c.opacity_raw == 0.0
                && c.sh.iter().all(z3) && z3(&c.p3d)
        })
    }

    /// Adds `k * other` to the parameter gradients.
    pub fn add_scaled(&mut self, other: &GradBuffer, k: f64) {
        for (a, b) in self.surfels.iter_mut().zip(&other.surfels) {
            a.mu_l += b.mu_l * k;
            for i in 0..4 {
                a.rot_l[i] += b.rot_l[i] * k;
            }
            a.s_l += b.s_l * k;
            a.opacity_raw += b.opacity_raw * k;
            for (x, y) in a.sh.iter_mut().zip(&b.sh) {
                *x += y * k;
            }
            a.p2d += b.p2d * k;
        }
        for (a, b) in self.children.iter_mut().zip(&other.children) {
            a.mu_l += b.mu_l * k;
            for i in 0..4 {
                a.rot_l[i] += b.rot_l[i] * k;
            }
            a.s_l += b.s_l * k;
            a.opacity_raw += b.opacity_raw * k;
            for (x, y) in a.sh.iter_mut().zip(&b.sh) {
                *x += y * k;
            }
            a.p3d += b.p3d * k;
        }
    }

    pub fn apply_mask(&mut self, mask: GradMask) {
        for s in &mut self.surfels {
            if !mask.surfel_geometry {
                s.mu_l = Vec3::zeros();
                s.rot_l = [0.0; 4];
                s.s_l = Vec2::zeros();
            }
            if !mask.surfel_opacity {
                s.opacity_raw = 0.0;
            }
            if !mask.surfel_sh {
                s.sh.iter_mut().for_each(|v| *v = Vec3::zeros());
            }
            if !mask.surfel_perturb {
                s.p2d = Vec3::zeros();
            }
        }
        if !mask.children {
            for c in &mut self.children {
                let n = c.sh.len();
                *c = ChildGrad {
                    sh: vec![Vec3::zeros(); n],
                    ..Default::default()
                };
            }
        }
    }
}

/// Upstream gradients of a loss with respect to render outputs.
#[derive(Clone, Copy, Debug, Default)]
pub struct Upstream<'a> {
    pub color: Option<&'a Image>,
    pub alpha: Option<&'a Image>,
    pub median_depth: Option<&'a Image>,
    /// Aligned with the render's trace terms.
    pub trace: Option<&'a [TraceGrad]>,
}

/// Gradient with respect to one trace term's weight, depth and normal.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TraceGrad {
    pub omega: f64,
    pub depth: f64,
    pub normal: Vec3,
}

/// Per-projection sums of per-pixel gradients.
#[derive(Clone, Debug, Default)]
struct SplatAccum {
    d_m: Mat3,
    d_conic: Matrix2<f64>,
    d_mean: Vector2<f64>,
    d_color: Vec3,
    d_normal: Vec3,
    d_opacity: f64,
}

impl SplatAccum {
    fn add(&mut self, o: &SplatAccum) {
        self.d_m += o.d_m;
        self.d_conic += o.d_conic;
        self.d_mean += o.d_mean;
        self.d_color += o.d_color;
        self.d_normal += o.d_normal;
        self.d_opacity += o.d_opacity;
    }
}

#[derive(Default)]
struct TileAccum {
    index: HashMap<u32, usize>,
    slots: Vec<(u32, SplatAccum)>,
}

impl TileAccum {
    fn slot(&mut self, splat: u32) -> &mut SplatAccum {
        let n = self.slots.len();
        let i = *self.index.entry(splat).or_insert(n);
        if i == n {
            self.slots.push((splat, SplatAccum::default()));
        }
        &mut self.slots[i].1
    }
}

fn check_upstream(cache: &ForwardCache, out: &RenderOutput, up: &Upstream) -> Result<()> {
    let (w, h) = (cache.camera.width, cache.camera.height);
    for (img, ch) in [(up.color, 3), (up.alpha, 1), (up.median_depth, 1)] {
        if let Some(img) = img {
            if img.width != w || img.height != h || img.channels != ch {
                return Err(Error::DimensionMismatch("upstream gradient image".into()));
            }
        }
    }
    if let Some(tg) = up.trace {
        let trace = out.trace.as_ref().ok_or(Error::MissingForwardCache)?;
        if tg.len() != trace.terms.len() {
            return Err(Error::DimensionMismatch("trace gradient length".into()));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn pixel_backward(
    cache: &ForwardCache,
    out: &RenderOutput,
    up: &Upstream,
    tile: u32,
    x: u32,
    y: u32,
    terms: &mut Vec<Term>,
    acc: &mut TileAccum,
) -> Result<()> {
    let view = &cache.view;
    let cfg = &cache.config;
    let p = y as usize * cache.camera.width as usize + x as usize;
    terms.clear();
    traverse_pixel(view, &cache.buffer, tile, x, y, cfg, terms)?;
    if terms.len() != cache.n_terms[p] as usize {
        return Err(Error::Inconsistent(format!(
            "pixel ({x},{y}) replayed {} terms, forward had {}",
            terms.len(),
            cache.n_terms[p]
        )));
    }
    let g_c = up.color.map(|i| Vec3::from_column_slice(i.pixel(p))).unwrap_or_else(Vec3::zeros);
    let g_a = up.alpha.map(|i| i.data[p]).unwrap_or(0.0);
    let g_med = up.median_depth.map(|i| i.data[p]).unwrap_or(0.0);
    let trace_grads: &[TraceGrad] = match (up.trace, out.trace.as_ref()) {
        (Some(tg), Some(tr)) => &tg[tr.offsets[p] as usize..tr.offsets[p + 1] as usize],
        _ => &[],
    };
    let med = if g_med != 0.0 { median_term(terms) } else { None };
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);

    let mut surfel_rank = terms.iter().filter(|t| matches!(t.eval, TermEval::Surfel(_))).count();
    let mut b = g_c.dot(&cfg.background);
    for (k, tm) in terms.iter().enumerate().rev() {
        let s = &view.splats[tm.splat as usize];
        let tg = if let TermEval::Surfel(_) = tm.eval {
            surfel_rank -= 1;
            trace_grads.get(surfel_rank).copied().unwrap_or_default()
        } else {
            TraceGrad::default()
        };
        let e = g_c.dot(&s.color) + g_a + tg.omega;
        let d_a = tm.t_before * (e - b);
        b = e * tm.a + (1.0 - tm.a) * b;

        let slot = acc.slot(tm.splat);
        slot.d_color += g_c * tm.weight();
        slot.d_opacity += d_a * tm.g;
        let d_g = d_a * s.opacity;
        match (&tm.eval, &s.geometry) {
            (TermEval::Surfel(ev), SplatGeometry::Surfel { .. }) => {
                let d_depth = tg.depth + if med == Some(k) { g_med } else { 0.0 };
                slot.d_normal += tg.normal;
                surfel_pixel_backward(s, px, py, ev, d_g, d_depth, &mut slot.d_m);
            }
            (TermEval::Child(d), SplatGeometry::Child { conic, .. }) => {
                let (dc, dm) = child_pixel_backward(conic, d, tm.g, d_g);
                slot.d_conic += dc;
                slot.d_mean += dm;
            }
            _ => unreachable!("term kind matches splat kind"),
        }
    }
    Ok(())
}

/// Gradients with respect to every global primitive in the forward cache.
/// Returns per-global gradients and SH gradients, plus per-splat pixel-space
/// center gradients for surfels.
#[allow(clippy::type_complexity)]
fn global_gradients(out: &RenderOutput, up: &Upstream) -> Result<(Vec<GlobalGrad>, Vec<Vec<Vec3>>, Vec<Option<Vector2<f64>>>)> {
    let cache = &out.cache;
    check_upstream(cache, out, up)?;
    let grid = cache.buffer.grid;
    let tiles: Vec<TileAccum> = (0..grid.num_tiles() as u32)
        .into_par_iter()
        .map(|tile| {
            let mut acc = TileAccum::default();
            let mut terms = Vec::new();
            let r = grid.tile_rect(tile);
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    pixel_backward(cache, out, up, tile, x, y, &mut terms, &mut acc)?;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let view = &cache.view;
    let mut accum = vec![SplatAccum::default(); view.splats.len()];
    for t in &tiles {
        for (s, a) in &t.slots {
            accum[*s as usize].add(a);
        }
    }

    let set = &cache.set;
    let cam: &Camera = &cache.camera;
    let per_splat: Vec<(GlobalGrad, Vec<Vec3>, Option<Vector2<f64>>)> = view
        .splats
        .par_iter()
        .zip(accum.par_iter())
        .zip(view.global_index.par_iter())
        .map(|((s, a), &gi)| {
            let g = &set.globals[gi as usize];
            match &s.geometry {
                SplatGeometry::Surfel { normal_sign, .. } => {
                    let (mut gg, d_sh) = surfel_project_backward(g, cam, *normal_sign, &a.d_m, &a.d_color, &a.d_normal);
                    gg.opacity = a.d_opacity;
                    let d_pc = cam.k.transpose() * a.d_m.column(2);
                    let screen = Vector2::new(d_pc.x * s.depth / cam.k[(0, 0)], d_pc.y * s.depth / cam.k[(1, 1)]);
                    (gg, d_sh, Some(screen))
                }
                SplatGeometry::Child { .. } => {
                    let (mut gg, d_sh) = child_project_backward(g, cam, &a.d_conic, &a.d_mean, 0.0, &a.d_color);
                    gg.opacity = a.d_opacity;
                    (gg, d_sh, None)
                }
            }
        })
        .collect();

    let n = set.globals.len();
    let mut gg = vec![GlobalGrad::default(); n];
    let mut gsh: Vec<Vec<Vec3>> = set.globals.iter().map(|g| vec![Vec3::zeros(); g.sh.len()]).collect();
    let mut screen = vec![None; n];
    for ((g, sh, sc), &gi) in per_splat.into_iter().zip(&view.global_index) {
        gg[gi as usize] = g;
        gsh[gi as usize] = sh;
        screen[gi as usize] = sc;
    }
    Ok((gg, gsh, screen))
}

/// Gradients of a loss with respect to the scene's raw parameters for the
/// render `out` of frame `t`. Fields outside `mask` are zero.
pub fn backward(
    scene: &Scene,
    mesh: &RiggedMesh,
    t: u32,
    out: &RenderOutput,
    up: &Upstream,
    mask: GradMask,
) -> Result<GradBuffer> {
    let cache = &out.cache;
    let ns = scene.surfels.len();
    let set = &cache.set;
    if set.globals.len() < ns
        || set.globals.len() > ns + scene.children.len()
        || set.globals[..ns].iter().any(|g| g.kind != PrimitiveKind::Surfel)
    {
        return Err(Error::MissingForwardCache);
    }
    let (mut gg, gsh, screen) = global_gradients(out, up)?;
    let frames = all_frames(mesh, t)?;
    let mut buf = GradBuffer::zeros(scene);

    for gi in ns..set.globals.len() {
        let j = set.globals[gi].source as usize;
        let c = &scene.children[j];
        let parent = set.parent[gi].ok_or(Error::MissingForwardCache)? as usize;
        let f = &frames[scene.surfels[parent].parent_tri as usize];
        let lg = global_backward(&c.mu_l, &c.rot_l, &c.s_l, c.opacity_raw, f, &gg[gi]);
        gg[parent].mu += lg.offset;
        buf.children[j] = ChildGrad {
            mu_l: lg.mu_l,
            rot_l: lg.rot_l,
            s_l: lg.s_l,
            opacity_raw: lg.opacity_raw,
            sh: gsh[gi].clone(),
            p3d: lg.offset,
        };
    }
    let cam = &cache.camera;
    for (i, s) in scene.surfels.iter().enumerate() {
        let f = &frames[s.parent_tri as usize];
        let s_l = Vec3::new(s.s_l.x, s.s_l.y, 0.0);
        let lg = global_backward(&s.mu_l, &s.rot_l, &s_l, s.opacity_raw, f, &gg[i]);
        buf.surfels[i] = SurfelGrad {
            mu_l: lg.mu_l,
            rot_l: lg.rot_l,
            s_l: Vec2::new(lg.s_l.x, lg.s_l.y),
            opacity_raw: lg.opacity_raw,
            sh: gsh[i].clone(),
            p2d: lg.offset,
        };
        if let Some(sc) = screen[i] {
            buf.visible[i] = true;
            let ndc = Vector2::new(sc.x * 0.5 * cam.width as f64, sc.y * 0.5 * cam.height as f64);
            buf.screen_grad[i] = ndc.norm();
        }
    }
    for (si, &gi) in cache.view.global_index.iter().enumerate() {
        if (gi as usize) < ns {
            let r = &cache.view.splats[si].rect;
            buf.screen_radius[gi as usize] = 0.5 * (r.x1 - r.x0).max(r.y1 - r.y0) as f64;
        }
    }
    buf.apply_mask(mask);
    Ok(buf)
}

/// Running statistics driving clone/split decisions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DensifyStats {
    pub grad_sum: Vec<f64>,
    pub count: Vec<u32>,
    pub max_radius: Vec<f64>,
}

impl DensifyStats {
    pub fn new(num_surfels: usize) -> Self {
        Self {
            grad_sum: vec![0.0; num_surfels],
            count: vec![0; num_surfels],
            max_radius: vec![0.0; num_surfels],
        }
    }

    /// Adds one view's screen-space gradient norms for visible surfels.
    pub fn accumulate(&mut self, g: &GradBuffer) {
        for i in 0..self.grad_sum.len().min(g.visible.len()) {
            if g.visible[i] && g.screen_grad[i] > 0.0 {
                self.grad_sum[i] += g.screen_grad[i];
                self.count[i] += 1;
            }
            if g.visible[i] {
                self.max_radius[i] = self.max_radius[i].max(g.screen_radius[i]);
            }
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        if self.count[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.count[i] as f64
        }
    }

    pub fn reset(&mut self, num_surfels: usize) {
        *self = Self::new(num_surfels);
    }
}
