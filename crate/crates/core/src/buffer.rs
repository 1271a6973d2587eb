//! Tile grid and the depth-sorted point list shared by rasterization,
//! backward and selection.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::project::PixelRect;

pub const DEFAULT_TILE_SIZE: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub tile_size: u32,
    pub tiles_x: u32,
    pub tiles_y: u32,
    pub width: u32,
    pub height: u32,
}

impl TileGrid {
    pub fn new(width: u32, height: u32, tile_size: u32) -> Result<Self> {
        if tile_size == 0 {
            return Err(Error::InvalidParameter("tile size must be positive".into()));
        }
        let tiles_x = width.div_ceil(tile_size);
        let tiles_y = height.div_ceil(tile_size);
        if tiles_x as u64 * tiles_y as u64 > u32::MAX as u64 {
            return Err(Error::Overflow("tile id does not fit in 32 bits".into()));
        }
        Ok(Self {
            tile_size,
            tiles_x,
            tiles_y,
            width,
            height,
        })
    }

    pub fn num_tiles(&self) -> usize {
        self.tiles_x as usize * self.tiles_y as usize
    }

    /// Pixels of tile `tile`, clipped to the image.
    pub fn tile_rect(&self, tile: u32) -> PixelRect {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        PixelRect {
            x0: tx * self.tile_size,
            y0: ty * self.tile_size,
            x1: ((tx + 1) * self.tile_size).min(self.width),
            y1: ((ty + 1) * self.tile_size).min(self.height),
        }
    }

    pub fn tile_of_pixel(&self, x: u32, y: u32) -> u32 {
        (y / self.tile_size) * self.tiles_x + x / self.tile_size
    }

    /// Ids of all tiles intersecting a pixel rectangle.
    pub fn tiles_overlapping(&self, r: &PixelRect) -> impl Iterator<Item = u32> + '_ {
        let (tx0, ty0) = (r.x0 / self.tile_size, r.y0 / self.tile_size);
        let (tx1, ty1) = if r.is_empty() {
            (tx0, ty0)
        } else {
            ((r.x1 - 1) / self.tile_size + 1, (r.y1 - 1) / self.tile_size + 1)
        };
        (ty0..ty1).flat_map(move |ty| (tx0..tx1).map(move |tx| ty * self.tiles_x + tx))
    }
}

/// Order-preserving map from `f32` to `u32`: ascending bits equal ascending value.
pub fn depth_bits(depth: f64) -> u32 {
    let b = (depth as f32).to_bits();
    if b & 0x8000_0000 != 0 {
        !b
    } else {
        b | 0x8000_0000
    }
}

pub fn encode_key(tile: u32, depth: f64) -> u64 {
    ((tile as u64) << 32) | depth_bits(depth) as u64
}

pub fn key_tile(key: u64) -> u32 {
    (key >> 32) as u32
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplatBuffer {
    pub grid: TileGrid,
    pub keys: Vec<u64>,
    /// Projection index per key.
    pub point_list: Vec<u32>,
    /// Per tile `[start, end)` into `keys`/`point_list`.
    pub tile_ranges: Vec<(u32, u32)>,
}

impl SplatBuffer {
    pub fn range(&self, tile: u32) -> std::ops::Range<usize> {
        let (a, b) = self.tile_ranges[tile as usize];
        a as usize..b as usize
    }
}

/// Builds the sorted point list. `rects[i]` and `depths[i]` describe the
/// footprint used for tiling and the sort depth of projection `i`.
pub fn build_splat_buffer(rects: &[PixelRect], depths: &[f64], grid: TileGrid) -> Result<SplatBuffer> {
    if rects.len() != depths.len() {
        return Err(Error::DimensionMismatch("rects and depths".into()));
    }
    if rects.len() > u32::MAX as usize {
        return Err(Error::Overflow("projection index does not fit in 32 bits".into()));
    }
    let mut pairs: Vec<(u64, u32)> = rects
        .par_iter()
        .zip(depths.par_iter())
        .enumerate()
        .flat_map_iter(|(i, (r, &d))| grid.tiles_overlapping(r).map(move |t| (encode_key(t, d), i as u32)))
        .collect();
    if pairs.len() > u32::MAX as usize {
        return Err(Error::Overflow("point list does not fit in 32-bit ranges".into()));
    }
    pairs.par_sort_unstable();
    let mut tile_ranges = vec![(0u32, 0u32); grid.num_tiles()];
    let mut start = 0usize;
    while start < pairs.len() {
        let tile = key_tile(pairs[start].0);
        let mut end = start + 1;
        while end < pairs.len() && key_tile(pairs[end].0) == tile {
            end += 1;
        }
        tile_ranges[tile as usize] = (start as u32, end as u32);
        start = end;
    }
    let (keys, point_list) = pairs.into_iter().unzip();
    Ok(SplatBuffer {
        grid,
        keys,
        point_list,
        tile_ranges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn full(grid: &TileGrid) -> PixelRect {
        PixelRect {
            x0: 0,
            y0: 0,
            x1: grid.width,
            y1: grid.height,
        }
    }

    #[test]
    fn same_tile_sorted_by_depth() {
        let grid = TileGrid::new(16, 16, 16).unwrap();
        let b = build_splat_buffer(&[full(&grid), full(&grid)], &[3.0, 1.0], grid).unwrap();
        assert_eq!(b.point_list, vec![1, 0]);
        assert_eq!(b.tile_ranges, vec![(0, 2)]);
    }

    #[test]
    fn empty_scene_has_empty_ranges() {
        let grid = TileGrid::new(40, 40, 16).unwrap();
        let b = build_splat_buffer(&[], &[], grid).unwrap();
        assert_eq!(grid.num_tiles(), 9);
        assert!(b.tile_ranges.iter().all(|(a, e)| a == e));
    }

    #[test]
    fn four_tile_footprint_gets_four_keys() {
        let grid = TileGrid::new(64, 64, 16).unwrap();
        let r = PixelRect { x0: 10, y0: 12, x1: 20, y1: 30 };
        let b = build_splat_buffer(&[r], &[2.5], grid).unwrap();
        assert_eq!(b.keys.len(), 4);
        let low: Vec<u32> = b.keys.iter().map(|k| *k as u32).collect();
        assert!(low.iter().all(|&d| d == low[0]));
        let tiles: Vec<u32> = b.keys.iter().map(|&k| key_tile(k)).collect();
        assert_eq!(tiles, vec![0, 1, 4, 5]);
    }

    #[test]
    fn partial_tiles_are_padded() {
        let grid = TileGrid::new(33, 17, 16).unwrap();
        assert_eq!((grid.tiles_x, grid.tiles_y), (3, 2));
        assert_eq!(grid.tile_rect(5), PixelRect { x0: 32, y0: 16, x1: 33, y1: 17 });
    }

    proptest! {
        #[test]
        fn depth_bits_preserve_order(a in -1e6f32..1e6, b in -1e6f32..1e6) {
            let (da, db) = (a as f64, b as f64);
            prop_assert_eq!(da < db, depth_bits(da) < depth_bits(db));
        }
    }
}
