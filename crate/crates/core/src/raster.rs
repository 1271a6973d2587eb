//! Tile rasterizer with mixed surfel / child compositing.
//!
//! Each pixel walks its tile's surfels front to back. Right after a surfel
//! whose child projected for this view, the child is composited at the
//! current transmittance, regardless of the child's own depth. Children whose
//! parent was culled are composited at their own sorted position.

use nalgebra::Vector2;
use rayon::prelude::*;

use crate::buffer::{build_splat_buffer, SplatBuffer, TileGrid, DEFAULT_TILE_SIZE};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;
use crate::project::{evaluate_child, evaluate_surfel, project_all, PixelRect, ProjectedSplat, SplatGeometry, SurfelEval, ALPHA_MIN};
use crate::rig::{all_frames, child_to_global, surfel_to_global, GlobalGaussian, PrimitiveKind};
use crate::scene::{RiggedMesh, Scene};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RenderMode {
    /// Surfels only; children are ignored entirely.
    Surfels,
    Mixed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RasterConfig {
    pub tile_size: u32,
    pub background: Vec3,
    pub alpha_min: f64,
    /// Traversal stops once transmittance falls below this.
    pub t_min: f64,
    pub early_stop: bool,
    /// Record per-pixel surfel weights, depths and normals.
    pub trace: bool,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            tile_size: DEFAULT_TILE_SIZE,
            background: Vec3::zeros(),
            alpha_min: ALPHA_MIN,
            t_min: 1e-4,
            early_stop: true,
            trace: false,
        }
    }
}

/// World-space primitives of one frame. Surfels come first.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimitiveSet {
    pub globals: Vec<GlobalGaussian>,
    /// For child entries, the index in `globals` of the parent surfel.
    pub parent: Vec<Option<u32>>,
}

impl PrimitiveSet {
    pub fn from_scene(scene: &Scene, mesh: &RiggedMesh, t: u32, mode: RenderMode) -> Result<Self> {
        let frames = all_frames(mesh, t)?;
        let mut globals: Vec<GlobalGaussian> = scene
            .surfels
            .iter()
            .enumerate()
            .map(|(i, s)| surfel_to_global(s, i as u32, &frames[s.parent_tri as usize], &scene.perturb, t))
            .collect();
        let mut parent = vec![None; globals.len()];
        if mode == RenderMode::Mixed {
            for (j, c) in scene.children.iter().enumerate() {
                let p = c.parent_surfel as usize;
                let f = &frames[scene.surfels[p].parent_tri as usize];
                let g = child_to_global(c, j as u32, &globals[p].mu, f, &scene.perturb, t);
                globals.push(g);
                parent.push(Some(p as u32));
            }
        }
        Ok(Self { globals, parent })
    }
}

/// Projections of a [`PrimitiveSet`] for one camera plus the tree links
/// between them.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewProjection {
    pub splats: Vec<ProjectedSplat>,
    /// Index into the primitive set for each splat.
    pub global_index: Vec<u32>,
    /// For surfel splats, the projected child spliced after it.
    pub child_slot: Vec<Option<u32>>,
    /// For child splats, whether it is composited at its own sorted position
    /// (its parent did not project).
    pub blend_alone: Vec<bool>,
}

impl ViewProjection {
    /// Footprint used for tiling: a surfel also covers its child's footprint
    /// so the child is reached from every tile it touches.
    pub fn key_rects(&self) -> Vec<PixelRect> {
        self.splats
            .iter()
            .enumerate()
            .map(|(i, s)| match self.child_slot[i] {
                Some(c) => union(&s.rect, &self.splats[c as usize].rect),
                None => s.rect,
            })
            .collect()
    }
}

fn union(a: &PixelRect, b: &PixelRect) -> PixelRect {
    PixelRect {
        x0: a.x0.min(b.x0),
        y0: a.y0.min(b.y0),
        x1: a.x1.max(b.x1),
        y1: a.y1.max(b.y1),
    }
}

pub fn project_view(set: &PrimitiveSet, cam: &Camera, alpha_min: f64) -> ViewProjection {
    let projected: Vec<Option<ProjectedSplat>> = set
        .globals
        .par_iter()
        .map(|g| project_all(std::slice::from_ref(g), cam, alpha_min).pop())
        .collect();
    let mut global_to_splat = vec![None; set.globals.len()];
    let mut splats = Vec::new();
    let mut global_index = Vec::new();
    for (gi, p) in projected.into_iter().enumerate() {
        if let Some(p) = p {
            global_to_splat[gi] = Some(splats.len() as u32);
            splats.push(p);
            global_index.push(gi as u32);
        }
    }
    let mut child_slot = vec![None; splats.len()];
    let mut blend_alone = vec![false; splats.len()];
    for (si, &gi) in global_index.iter().enumerate() {
        if let Some(p) = set.parent[gi as usize] {
            match global_to_splat[p as usize] {
                Some(ps) => child_slot[ps as usize] = Some(si as u32),
                None => blend_alone[si] = true,
            }
        }
    }
    ViewProjection {
        splats,
        global_index,
        child_slot,
        blend_alone,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TermEval {
    Surfel(SurfelEval),
    /// Offset of the pixel from the child's screen mean.
    Child(Vector2<f64>),
}

/// One composited term of a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Term {
    pub splat: u32,
    /// Buffer position whose traversal produced the term.
    pub entry: u32,
    pub g: f64,
    /// `opacity * g`.
    pub a: f64,
    /// Transmittance before this term.
    pub t_before: f64,
    pub eval: TermEval,
}

impl Term {
    pub fn weight(&self) -> f64 {
        self.a * self.t_before
    }
}

/// Walks one pixel and appends its composited terms. Returns the final
/// transmittance.
pub fn traverse_pixel(
    view: &ViewProjection,
    buffer: &SplatBuffer,
    tile: u32,
    x: u32,
    y: u32,
    cfg: &RasterConfig,
    terms: &mut Vec<Term>,
) -> Result<f64> {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut t = 1.0;
    let push = |si: u32, entry: u32, t: &mut f64, terms: &mut Vec<Term>| -> Result<bool> {
        let s = &view.splats[si as usize];
        let (g, eval) = match s.geometry {
            SplatGeometry::Surfel { .. } => match evaluate_surfel(s, px, py) {
                Some(e) if e.depth > 0.0 => (e.g, TermEval::Surfel(e)),
                _ => return Ok(false),
            },
            SplatGeometry::Child { .. } => {
                let (g, d) = evaluate_child(s, px, py).expect("child geometry");
                (g, TermEval::Child(d))
            }
        };
        let a = s.opacity * g;
        if !a.is_finite() {
            return Err(Error::NonFinite {
                primitive: s.source as usize,
            });
        }
        if a < cfg.alpha_min {
            return Ok(false);
        }
        terms.push(Term {
            splat: si,
            entry,
            g,
            a,
            t_before: *t,
            eval,
        });
        *t *= 1.0 - a;
        Ok(cfg.early_stop && *t < cfg.t_min)
    };
    for e in buffer.range(tile) {
        let si = buffer.point_list[e];
        let s = &view.splats[si as usize];
        let done = match s.kind {
            PrimitiveKind::Surfel => {
                if push(si, e as u32, &mut t, terms)? {
                    true
                } else if let Some(c) = view.child_slot[si as usize] {
                    let cr = &view.splats[c as usize].rect;
                    if x >= cr.x0 && x < cr.x1 && y >= cr.y0 && y < cr.y1 {
                        push(c, e as u32, &mut t, terms)?
                    } else {
                        false
                    }
                } else {
                    false
                }
            }
            PrimitiveKind::Child => {
                if view.blend_alone[si as usize] {
                    push(si, e as u32, &mut t, terms)?
                } else {
                    false
                }
            }
        };
        if done {
            break;
        }
    }
    Ok(t)
}

/// Index of the term whose depth defines the median depth: the latest
/// surfel term at or before the point where accumulated alpha reaches 0.5.
pub fn median_term(terms: &[Term]) -> Option<usize> {
    let mut last_surfel = None;
    for (i, tm) in terms.iter().enumerate() {
        if matches!(tm.eval, TermEval::Surfel(_)) {
            last_surfel = Some(i);
        }
        if tm.t_before * (1.0 - tm.a) <= 0.5 {
            return last_surfel;
        }
    }
    None
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceTerm {
    pub splat: u32,
    pub omega: f64,
    pub depth: f64,
    /// Camera-space unit normal.
    pub normal: Vec3,
}

/// Per-pixel surfel terms in compositing order, row-major over pixels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    pub offsets: Vec<u32>,
    pub terms: Vec<TraceTerm>,
}

impl Trace {
    pub fn pixel(&self, p: usize) -> &[TraceTerm] {
        &self.terms[self.offsets[p] as usize..self.offsets[p + 1] as usize]
    }
}

/// State retained from a forward pass for backward and selection.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub set: PrimitiveSet,
    pub view: ViewProjection,
    pub buffer: SplatBuffer,
    pub camera: Camera,
    pub config: RasterConfig,
    pub n_terms: Vec<u32>,
    pub final_t: Vec<f64>,
    /// Aligned with `buffer.point_list`: the entry produced at least one term.
    pub contributed: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: Image,
    pub alpha: Image,
    /// Zero where accumulated alpha never reaches 0.5.
    pub median_depth: Image,
    /// Weighted camera-space surfel normals.
    pub normal: Image,
    pub transmittance: Image,
    pub trace: Option<Trace>,
    pub cache: ForwardCache,
}

struct TileResult {
    pixels: Vec<(u32, u32)>,
    color: Vec<Vec3>,
    alpha: Vec<f64>,
    median: Vec<f64>,
    normal: Vec<Vec3>,
    final_t: Vec<f64>,
    n_terms: Vec<u32>,
    trace: Vec<Vec<TraceTerm>>,
    contributed: Vec<bool>,
}

fn render_tile(view: &ViewProjection, buffer: &SplatBuffer, tile: u32, cfg: &RasterConfig) -> Result<TileResult> {
    let rect = buffer.grid.tile_rect(tile);
    let range = buffer.range(tile);
    let n = ((rect.x1 - rect.x0) * (rect.y1 - rect.y0)) as usize;
    let mut out = TileResult {
        pixels: Vec::with_capacity(n),
        color: Vec::with_capacity(n),
        alpha: Vec::with_capacity(n),
        median: Vec::with_capacity(n),
        normal: Vec::with_capacity(n),
        final_t: Vec::with_capacity(n),
        n_terms: Vec::with_capacity(n),
        trace: Vec::new(),
        contributed: vec![false; range.len()],
    };
    let mut terms = Vec::new();
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            terms.clear();
            let t_final = traverse_pixel(view, buffer, tile, x, y, cfg, &mut terms)?;
            let mut c = cfg.background * t_final;
            let mut nrm = Vec3::zeros();
            let mut tr = Vec::new();
            for tm in &terms {
                let s = &view.splats[tm.splat as usize];
                let w = tm.weight();
                c += s.color * w;
                out.contributed[tm.entry as usize - range.start] = true;
                if let (TermEval::Surfel(e), SplatGeometry::Surfel { normal, .. }) = (&tm.eval, &s.geometry) {
                    nrm += normal * w;
                    if cfg.trace {
                        tr.push(TraceTerm {
                            splat: tm.splat,
                            omega: w,
                            depth: e.depth,
                            normal: *normal,
                        });
                    }
                }
            }
            let median = match median_term(&terms) {
                Some(i) => match terms[i].eval {
                    TermEval::Surfel(e) => e.depth,
                    TermEval::Child(_) => 0.0,
                },
                None => 0.0,
            };
            out.pixels.push((x, y));
            out.color.push(c);
            out.alpha.push(1.0 - t_final);
            out.median.push(median);
            out.normal.push(nrm);
            out.final_t.push(t_final);
            out.n_terms.push(terms.len() as u32);
            if cfg.trace {
                out.trace.push(tr);
            }
        }
    }
    Ok(out)
}

pub fn render_primitives(set: PrimitiveSet, cam: &Camera, cfg: &RasterConfig) -> Result<RenderOutput> {
    cam.validate()?;
    let grid = TileGrid::new(cam.width, cam.height, cfg.tile_size)?;
    let view = project_view(&set, cam, cfg.alpha_min);
    let depths: Vec<f64> = view.splats.iter().map(|s| s.depth).collect();
    let buffer = build_splat_buffer(&view.key_rects(), &depths, grid)?;
    let tiles: Vec<TileResult> = (0..grid.num_tiles() as u32)
        .into_par_iter()
        .map(|t| render_tile(&view, &buffer, t, cfg))
        .collect::<Result<_>>()?;

    let (w, h) = (cam.width, cam.height);
    let np = cam.num_pixels();
    let mut color = Image::new(w, h, 3);
    let mut alpha = Image::new(w, h, 1);
    let mut median_depth = Image::new(w, h, 1);
    let mut normal = Image::new(w, h, 3);
    let mut transmittance = Image::new(w, h, 1);
    let mut n_terms = vec![0u32; np];
    let mut final_t = vec![1.0; np];
    let mut contributed = Vec::with_capacity(buffer.point_list.len());
    let mut pixel_trace: Vec<Vec<TraceTerm>> = if cfg.trace { vec![Vec::new(); np] } else { Vec::new() };
    for tr in tiles {
        contributed.extend_from_slice(&tr.contributed);
        for (k, &(x, y)) in tr.pixels.iter().enumerate() {
            let p = y as usize * w as usize + x as usize;
            color.pixel_mut(p).copy_from_slice(tr.color[k].as_slice());
            normal.pixel_mut(p).copy_from_slice(tr.normal[k].as_slice());
            alpha.data[p] = tr.alpha[k];
            median_depth.data[p] = tr.median[k];
            transmittance.data[p] = tr.final_t[k];
            n_terms[p] = tr.n_terms[k];
            final_t[p] = tr.final_t[k];
        }
        if cfg.trace {
            for (k, terms) in tr.trace.into_iter().enumerate() {
                let (x, y) = tr.pixels[k];
                pixel_trace[y as usize * w as usize + x as usize] = terms;
            }
        }
    }
    let trace = cfg.trace.then(|| {
        let mut offsets = Vec::with_capacity(np + 1);
        offsets.push(0u32);
        let mut terms = Vec::new();
        for t in pixel_trace {
            terms.extend(t);
            offsets.push(terms.len() as u32);
        }
        Trace { offsets, terms }
    });
    Ok(RenderOutput {
        color,
        alpha,
        median_depth,
        normal,
        transmittance,
        trace,
        cache: ForwardCache {
            set,
            view,
            buffer,
            camera: cam.clone(),
            config: cfg.clone(),
            n_terms,
            final_t,
            contributed,
        },
    })
}

pub fn render(
    scene: &Scene,
    mesh: &RiggedMesh,
    t: u32,
    cam: &Camera,
    mode: RenderMode,
    cfg: &RasterConfig,
) -> Result<RenderOutput> {
    render_primitives(PrimitiveSet::from_scene(scene, mesh, t, mode)?, cam, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{quat_to_mat, Mat3};

    fn cam(size: u32) -> Camera {
        Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), -Vec3::y(), size as f64, size, size)
    }

    fn disc(mu: Vec3, s: f64, opacity: f64, dc: Vec3) -> GlobalGaussian {
        GlobalGaussian {
            mu,
            rotation: Mat3::identity(),
            scale: Vec3::new(s, s, 0.0),
            opacity,
            sh: vec![dc],
            kind: PrimitiveKind::Surfel,
            source: 0,
        }
    }

    fn set_of(globals: Vec<GlobalGaussian>, parent: Vec<Option<u32>>) -> PrimitiveSet {
        PrimitiveSet { globals, parent }
    }

    #[test]
    fn empty_scene_is_background() {
        let cfg = RasterConfig {
            background: Vec3::new(0.2, 0.4, 0.6),
            ..Default::default()
        };
        let out = render_primitives(set_of(vec![], vec![]), &cam(16), &cfg).unwrap();
        for p in 0..out.color.num_pixels() {
            assert_eq!(out.color.pixel(p), &[0.2, 0.4, 0.6]);
            assert_eq!(out.alpha.data[p], 0.0);
        }
    }

    #[test]
    fn opaque_surfel_gives_its_color() {
        let mut g = disc(Vec3::zeros(), 10.0, 1.0, Vec3::new(1.0, -1.0, 0.0));
        g.opacity = 1.0;
        let out = render_primitives(set_of(vec![g], vec![None]), &cam(8), &RasterConfig::default()).unwrap();
        let p = 4 * 8 + 4;
        let c = out.color.pixel(p);
        let expected = 0.5 + crate::sh::C0;
        // the pixel is near the disc center, G very close to one
        assert!((c[0] - expected).abs() < 1e-3);
        assert!((out.median_depth.data[p] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn facing_away_is_background() {
        let g = disc(Vec3::zeros(), 0.5, 0.9, Vec3::zeros());
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::new(0.0, 0.0, -6.0), -Vec3::y(), 16.0, 16, 16);
        let out = render_primitives(set_of(vec![g], vec![None]), &cam, &RasterConfig::default()).unwrap();
        assert!(out.alpha.data.iter().all(|&a| a == 0.0));
        assert!(out.cache.view.splats.is_empty());
    }

    #[test]
    fn two_translucent_surfels_median_is_second() {
        let mut a = disc(Vec3::new(0.0, 0.0, 0.0), 100.0, 0.4, Vec3::zeros());
        let mut b = disc(Vec3::new(0.0, 0.0, 1.0), 100.0, 0.4, Vec3::zeros());
        a.source = 0;
        b.source = 1;
        let out = render_primitives(set_of(vec![b, a], vec![None, None]), &cam(8), &RasterConfig::default()).unwrap();
        let p = 3 * 8 + 3;
        assert!((out.median_depth.data[p] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn child_is_spliced_after_parent_even_if_farther() {
        // parent at depth 3, an occluder at depth 3.5, child sits behind both
        let parent = disc(Vec3::zeros(), 0.4, 0.5, Vec3::new(1.0, 0.0, 0.0));
        let mid = disc(Vec3::new(0.0, 0.0, 0.5), 0.4, 0.5, Vec3::new(0.0, 1.0, 0.0));
        let child = GlobalGaussian {
            mu: Vec3::new(0.0, 0.0, 2.0),
            rotation: quat_to_mat(&[1.0, 0.0, 0.0, 0.0]),
            scale: Vec3::repeat(0.3),
            opacity: 0.6,
            sh: vec![Vec3::new(0.0, 0.0, 1.0)],
            kind: PrimitiveKind::Child,
            source: 0,
        };
        let out = render_primitives(
            set_of(vec![parent, mid, child], vec![None, None, Some(0)]),
            &cam(8),
            &RasterConfig::default(),
        )
        .unwrap();
        let c = &out.cache;
        let mut terms = Vec::new();
        let tile = c.buffer.grid.tile_of_pixel(4, 4);
        traverse_pixel(&c.view, &c.buffer, tile, 4, 4, &c.config, &mut terms).unwrap();
        let kinds: Vec<u32> = terms.iter().map(|t| c.view.global_index[t.splat as usize]).collect();
        assert_eq!(kinds, vec![0, 2, 1]);
    }
}
