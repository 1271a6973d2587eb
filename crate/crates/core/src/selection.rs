//! Error-based surfel selection: rank render tiles by error, decode the
//! surfels that shaped the worst tiles, close over triangle siblings and
//! union across sampled views.

use std::collections::BTreeSet;

use crate::buffer::{SplatBuffer, TileGrid};
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::{render, ForwardCache, RasterConfig, RenderMode};
use crate::rig::PrimitiveKind;
use crate::scene::{RiggedMesh, Scene};

/// Per-tile mean squared error.
#[derive(Clone, Debug, PartialEq)]
pub struct TileErrorMap {
    pub grid: TileGrid,
    pub values: Vec<f64>,
}

impl TileErrorMap {
    /// Top `k` tiles by error, ties broken toward the lower tile id.
    pub fn top_k(&self, k: usize) -> Vec<u32> {
        let mut ids: Vec<u32> = (0..self.values.len() as u32).collect();
        ids.sort_by(|&a, &b| self.values[b as usize].total_cmp(&self.values[a as usize]).then(a.cmp(&b)));
        ids.truncate(k);
        ids
    }
}

pub fn tile_mse(rendered: &Image, truth: &Image, tile_size: u32) -> Result<TileErrorMap> {
    rendered.check_shape(truth)?;
    let grid = TileGrid::new(rendered.width, rendered.height, tile_size)?;
    let values = (0..grid.num_tiles() as u32)
        .map(|t| {
            let r = grid.tile_rect(t);
            let mut sum = 0.0;
            let mut n = 0usize;
            for y in r.y0..r.y1 {
                for x in r.x0..r.x1 {
                    let i = rendered.index(x, y);
                    for c in 0..rendered.channels {
                        let d = rendered.data[i + c] - truth.data[i + c];
                        sum += d * d;
                        n += 1;
                    }
                }
            }
            if n == 0 {
                0.0
            } else {
                sum / n as f64
            }
        })
        .collect();
    Ok(TileErrorMap { grid, values })
}

/// Source indices of surfel entries in `tile`'s run flagged as contributing.
/// `source_of` maps a point-list value to `(kind, source index)`.
pub fn contributing_surfels(
    buffer: &SplatBuffer,
    tile: u32,
    contributed: &[bool],
    source_of: impl Fn(u32) -> (PrimitiveKind, u32),
) -> Result<BTreeSet<u32>> {
    if tile as usize >= buffer.tile_ranges.len() {
        return Err(Error::OutOfRange {
            what: "tile",
            index: tile as usize,
            len: buffer.tile_ranges.len(),
        });
    }
    if contributed.len() != buffer.point_list.len() {
        return Err(Error::DimensionMismatch("contribution flags vs point list".into()));
    }
    let mut out = BTreeSet::new();
    for e in buffer.range(tile) {
        if contributed[e] {
            let (kind, src) = source_of(buffer.point_list[e]);
            if kind == PrimitiveKind::Surfel {
                out.insert(src);
            }
        }
    }
    Ok(out)
}

/// Contributing surfels of a tile in a cached render.
pub fn cache_contributors(cache: &ForwardCache, tile: u32) -> Result<BTreeSet<u32>> {
    contributing_surfels(&cache.buffer, tile, &cache.contributed, |p| {
        let s = &cache.view.splats[p as usize];
        (s.kind, s.source)
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelectionSet {
    pub tiles: Vec<u32>,
    /// Direct contributors of the selected tiles.
    pub s: BTreeSet<u32>,
    /// `s` closed over triangle siblings.
    pub s_prime: BTreeSet<u32>,
}

/// One selection round for a sampled frame and view.
pub fn select_iteration(
    scene: &Scene,
    mesh: &RiggedMesh,
    t: u32,
    cam: &Camera,
    truth: &Image,
    k: usize,
    raster: &RasterConfig,
) -> Result<SelectionSet> {
    if k == 0 {
        return Ok(SelectionSet::default());
    }
    let out = render(scene, mesh, t, cam, RenderMode::Surfels, raster)?;
    let errors = tile_mse(&out.color, truth, raster.tile_size)?;
    let n_tiles = errors.values.len();
    if k > n_tiles {
        log::warn!("selection k = {k} exceeds the {n_tiles} tiles; clamping");
    }
    let tiles = errors.top_k(k);
    let mut s = BTreeSet::new();
    for &tile in &tiles {
        s.extend(cache_contributors(&out.cache, tile)?);
    }
    let s_prime = scene.tree.sibling_closure(&scene.surfels, &s);
    Ok(SelectionSet { tiles, s, s_prime })
}

/// A training sample: frame id, camera and ground-truth image.
pub trait ViewSampler {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Index of the sample for iteration `iter`.
    fn pick(&mut self, iter: usize) -> usize;
    fn sample(&self, index: usize) -> (u32, &Camera, &Image);
}

/// Union of sibling-closed selections over `n` sampled views.
pub fn run_selection(
    scene: &Scene,
    mesh: &RiggedMesh,
    sampler: &mut dyn ViewSampler,
    n: usize,
    k: usize,
    raster: &RasterConfig,
) -> Result<BTreeSet<u32>> {
    if n == 0 {
        return Err(Error::InvalidParameter("selection needs n >= 1".into()));
    }
    if sampler.is_empty() {
        return Err(Error::InvalidParameter("empty dataset".into()));
    }
    let mut u = BTreeSet::new();
    for iter in 0..n {
        let idx = sampler.pick(iter);
        let (t, cam, truth) = sampler.sample(idx);
        let sel = select_iteration(scene, mesh, t, cam, truth, k, raster)?;
        u.extend(sel.s_prime);
    }
    Ok(u)
}

pub fn format_index_list(u: &BTreeSet<u32>) -> String {
    u.iter().map(|i| format!("{i}\n")).collect()
}

pub fn parse_index_list(text: &str) -> Result<BTreeSet<u32>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<u32>().map_err(|e| Error::Format(format!("index list line {l:?}: {e}"))))
        .collect()
}
