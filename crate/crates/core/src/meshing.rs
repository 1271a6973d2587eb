//! Mesh extraction: median-depth renders fused into a truncated signed
//! distance volume, then marching cubes with fused vertex colors.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;
use crate::mc_tables::{EDGE_TABLE, TRIANGLE_TABLE};
use crate::raster::{render, RasterConfig, RenderMode};
use crate::scene::{RiggedMesh, Scene};

/// Cell corner offsets.
pub const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Cell edges as corner pairs.
pub const EDGES: [[usize; 2]; 12] = [
    [0, 1],
    [1, 2],
    [2, 3],
    [3, 0],
    [4, 5],
    [5, 6],
    [6, 7],
    [7, 4],
    [0, 4],
    [1, 5],
    [2, 6],
    [3, 7],
];

/// One view prepared for fusion.
#[derive(Clone, Debug)]
pub struct FusionInput {
    pub camera: Camera,
    /// Camera-space z of the median surface, 0 where invalid.
    pub depth: Image,
    pub color: Image,
    pub alpha: Image,
    pub valid: Vec<bool>,
}

impl FusionInput {
    /// Marks pixels with alpha below 0.5 or no median depth as invalid.
    pub fn new(camera: Camera, depth: Image, color: Image, alpha: Image) -> Result<Self> {
        if depth.channels != 1 || alpha.channels != 1 || color.channels != 3 {
            return Err(Error::DimensionMismatch("fusion input channels".into()));
        }
        depth.check_shape(&alpha)?;
        if color.width != depth.width || color.height != depth.height || depth.width != camera.width || depth.height != camera.height {
            return Err(Error::DimensionMismatch("fusion input size".into()));
        }
        let valid = depth.data.iter().zip(&alpha.data).map(|(&d, &a)| a >= 0.5 && d > 0.0 && d.is_finite()).collect();
        Ok(Self {
            camera,
            depth,
            color,
            alpha,
            valid,
        })
    }
}

/// Renders median depth, color and alpha of every `(frame, camera)` view.
pub fn render_fusion_inputs(
    scene: &Scene,
    mesh: &RiggedMesh,
    views: &[(u32, Camera)],
    raster: &RasterConfig,
) -> Result<Vec<FusionInput>> {
    let cfg = RasterConfig { trace: false, ..raster.clone() };
    views
        .iter()
        .map(|(t, cam)| {
            let out = render(scene, mesh, *t, cam, RenderMode::Mixed, &cfg)?;
            FusionInput::new(cam.clone(), out.median_depth, out.color.clamped(), out.alpha)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VolumeParams {
    /// Center of voxel (0, 0, 0).
    pub origin: Vec3,
    pub voxel_size: f64,
    pub dims: [usize; 3],
    /// Truncation distance in voxels.
    pub truncation_voxels: f64,
}

impl VolumeParams {
    /// Grid over the box `[lo, hi]` with `voxel = max side / resolution`,
    /// padded by `pad` voxels on every side.
    pub fn covering(lo: &Vec3, hi: &Vec3, resolution: usize, truncation_voxels: f64, pad: usize) -> Result<Self> {
        let extent = (hi - lo).max();
        if !(extent > 0.0) || resolution == 0 {
            return Err(Error::InvalidParameter("volume needs a positive extent and resolution".into()));
        }
        let voxel_size = extent / resolution as f64;
        let origin = lo - Vec3::repeat(pad as f64 * voxel_size);
        let dims = std::array::from_fn(|a| ((hi[a] - lo[a]) / voxel_size).ceil() as usize + 1 + 2 * pad);
        let p = Self {
            origin,
            voxel_size,
            dims,
            truncation_voxels,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voxel_size > 0.0) || !(self.truncation_voxels > 0.0) || self.dims.iter().any(|&d| d < 2) {
            return Err(Error::InvalidParameter("volume parameters".into()));
        }
        let n = self.dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        match n {
            Some(n) if n <= 1 << 28 => Ok(()),
            _ => Err(Error::Overflow("volume too large".into())),
        }
    }

    pub fn num_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64) * self.voxel_size
    }

    pub fn truncation(&self) -> f64 {
        self.truncation_voxels * self.voxel_size
    }
}

/// Weighted sums of normalized truncated signed distance and color.
#[derive(Clone, Debug, PartialEq)]
pub struct TsdfVolume {
    pub params: VolumeParams,
    pub tsdf_sum: Vec<f64>,
    pub weight: Vec<f64>,
    pub color_sum: Vec<Vec3>,
}

impl TsdfVolume {
    pub fn new(params: VolumeParams) -> Result<Self> {
        params.validate()?;
        let n = params.num_voxels();
        Ok(Self {
            params,
            tsdf_sum: vec![0.0; n],
            weight: vec![0.0; n],
            color_sum: vec![Vec3::zeros(); n],
        })
    }

    /// Fused value in [-1, 1]; unobserved voxels report -1.
    pub fn tsdf(&self, idx: usize) -> f64 {
        if self.weight[idx] > 0.0 {
            self.tsdf_sum[idx] / self.weight[idx]
        } else {
            -1.0
        }
    }

    pub fn color(&self, idx: usize) -> Vec3 {
        if self.weight[idx] > 0.0 {
            self.color_sum[idx] / self.weight[idx]
        } else {
            Vec3::zeros()
        }
    }

    /// Adds one view: per voxel, the signed distance from the voxel to the
    /// observed surface along the optical axis, clamped to the truncation
    /// band. Voxels more than one band behind the surface are skipped.
    pub fn integrate(&mut self, input: &FusionInput) {
        let p = self.params;
        let tau = p.truncation();
        let cam = &input.camera;
        let (w, h) = (cam.width as f64, cam.height as f64);
        let plane = p.dims[0] * p.dims[1];
        self.tsdf_sum
            .par_chunks_mut(plane)
            .zip(self.weight.par_chunks_mut(plane))
            .zip(self.color_sum.par_chunks_mut(plane))
            .enumerate()
            .for_each(|(k, ((ts, ws), cs))| {
                for j in 0..p.dims[1] {
                    for i in 0..p.dims[0] {
                        let pc = cam.to_camera(&p.center(i, j, k));
                        if pc.z <= 0.0 {
                            continue;
                        }
                        let (x, y) = cam.project(&pc);
                        if !(x >= 0.0 && y >= 0.0 && x < w && y < h) {
                            continue;
                        }
                        let pix = y as usize * cam.width as usize + x as usize;
                        if !input.valid[pix] {
                            continue;
                        }
                        let sdf = input.depth.data[pix] - pc.z;
                        if sdf < -tau {
                            continue;
                        }
                        let v = (sdf / tau).min(1.0);
                        let c = Vec3::from_column_slice(input.color.pixel(pix));
                        let l = j * p.dims[0] + i;
                        ts[l] += v;
                        ws[l] += 1.0;
                        cs[l] += c;
                    }
                }
            });
    }

    /// Fills the volume from a signed distance function (positive outside),
    /// as if observed once.
    pub fn fill_sdf(&mut self, sdf: impl Fn(&Vec3) -> f64, color: impl Fn(&Vec3) -> Vec3) {
        let p = self.params;
        let tau = p.truncation();
        for k in 0..p.dims[2] {
            for j in 0..p.dims[1] {
                for i in 0..p.dims[0] {
                    let c = p.center(i, j, k);
                    let idx = p.index(i, j, k);
                    self.tsdf_sum[idx] = (sdf(&c) / tau).clamp(-1.0, 1.0);
                    self.weight[idx] = 1.0;
                    self.color_sum[idx] = color(&c);
                }
            }
        }
    }

    /// Trilinear color over observed neighbors.
    pub fn sample_color(&self, x: &Vec3) -> Vec3 {
        let p = &self.params;
        let g = (x - p.origin) / p.voxel_size;
        let base: [usize; 3] = std::array::from_fn(|a| (g[a].floor().max(0.0) as usize).min(p.dims[a] - 2));
        let f: [f64; 3] = std::array::from_fn(|a| (g[a] - base[a] as f64).clamp(0.0, 1.0));
        let mut acc = Vec3::zeros();
        let mut wsum = 0.0;
        for c in CORNERS {
            let idx = p.index(base[0] + c[0], base[1] + c[1], base[2] + c[2]);
            if self.weight[idx] <= 0.0 {
                continue;
            }
            let w: f64 = (0..3).map(|a| if c[a] == 1 { f[a] } else { 1.0 - f[a] }).product();
            acc += self.color(idx) * w;
            wsum += w;
        }
        if wsum > 0.0 {
            (acc / wsum).map(|v| v.clamp(0.0, 1.0))
        } else {
            Vec3::zeros()
        }
    }
}

/// Fuses every input into a fresh volume.
pub fn tsdf_fuse(inputs: &[FusionInput], params: VolumeParams) -> Result<TsdfVolume> {
    if inputs.is_empty() {
        return Err(Error::InvalidParameter("fusion needs at least one view".into()));
    }
    let mut vol = TsdfVolume::new(params)?;
    for inp in inputs {
        vol.integrate(inp);
    }
    Ok(vol)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TexturedMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub colors: Vec<Vec3>,
}

impl TexturedMesh {
    pub fn validate(&self) -> Result<()> {
        if self.colors.len() != self.vertices.len() {
            return Err(Error::Inconsistent("vertex color count".into()));
        }
        let n = self.vertices.len() as u32;
        if self.triangles.iter().flatten().any(|&i| i >= n) {
            return Err(Error::Inconsistent("triangle index out of range".into()));
        }
        if self.colors.iter().flat_map(|c| c.iter()).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Inconsistent("vertex color outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn save_ply(&self, path: &Path) -> Result<()> {
        crate::io::write_ply(path, &self.vertices, &self.colors, &self.triangles)
    }

    /// Drops connected components (through shared vertices) with fewer than
    /// `min_faces` triangles and compacts the vertex list.
    pub fn remove_small_components(&mut self, min_faces: usize) {
        if min_faces <= 1 || self.triangles.is_empty() {
            return;
        }
        let mut parent: Vec<u32> = (0..self.vertices.len() as u32).collect();
        fn find(p: &mut [u32], mut x: u32) -> u32 {
            while p[x as usize] != x {
                p[x as usize] = p[p[x as usize] as usize];
                x = p[x as usize];
            }
            x
        }
        for t in &self.triangles {
            for e in 1..3 {
                let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[e]));
                if a != b {
                    parent[a.max(b) as usize] = a.min(b);
                }
            }
        }
        let mut faces: HashMap<u32, usize> = HashMap::new();
        let roots: Vec<u32> = self.triangles.iter().map(|t| find(&mut parent, t[0])).collect();
        for r in &roots {
            *faces.entry(*r).or_default() += 1;
        }
        let keep: Vec<bool> = roots.iter().map(|r| faces[r] >= min_faces).collect();
        let mut remap = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        let mut colors = Vec::new();
        let mut tris = Vec::new();
        for (t, k) in self.triangles.iter().zip(&keep) {
            if !k {
                continue;
            }
            tris.push(t.map(|i| {
                if remap[i as usize] == u32::MAX {
                    remap[i as usize] = verts.len() as u32;
                    verts.push(self.vertices[i as usize]);
                    colors.push(self.colors[i as usize]);
                }
                remap[i as usize]
            }));
        }
        self.vertices = verts;
        self.colors = colors;
        self.triangles = tris;
    }
}

/// Marching cubes over the zero level set. Cells touching an unobserved
/// voxel are skipped; vertices are shared between neighboring cells.
pub fn extract_mesh(vol: &TsdfVolume, min_component_faces: usize) -> TexturedMesh {
    let p = &vol.params;
    let [nx, ny, nz] = p.dims;
    let mut mesh = TexturedMesh::default();
    // key: (voxel index of the lower corner, axis)
    let mut edge_vertex: HashMap<(usize, u8), u32> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let mut vals = [0.0; 8];
                let mut idxs = [0usize; 8];
                let mut observed = true;
                let mut case = 0usize;
                for (c, o) in CORNERS.iter().enumerate() {
                    let idx = p.index(i + o[0], j + o[1], k + o[2]);
                    idxs[c] = idx;
                    if vol.weight[idx] <= 0.0 {
                        observed = false;
                        break;
                    }
                    vals[c] = vol.tsdf(idx);
                    if vals[c] < 0.0 {
                        case |= 1 << c;
                    }
                }
                if !observed || EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut ev = [u32::MAX; 12];
                for (e, [a, b]) in EDGES.iter().enumerate() {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let (lo, hi) = if idxs[*a] < idxs[*b] { (*a, *b) } else { (*b, *a) };
                    let axis = (0..3).find(|&ax| CORNERS[lo][ax] != CORNERS[hi][ax]).unwrap() as u8;
                    let key = (idxs[lo], axis);
                    ev[e] = *edge_vertex.entry(key).or_insert_with(|| {
                        let (va, vb) = (vals[lo], vals[hi]);
                        let s = if va == vb { 0.5 } else { va / (va - vb) };
                        let pa = p.center(i + CORNERS[lo][0], j + CORNERS[lo][1], k + CORNERS[lo][2]);
                        let pb = p.center(i + CORNERS[hi][0], j + CORNERS[hi][1], k + CORNERS[hi][2]);
                        let x = pa + (pb - pa) * s;
                        mesh.vertices.push(x);
                        mesh.colors.push(vol.sample_color(&x));
                        (mesh.vertices.len() - 1) as u32
                    });
                }
                for tri in TRIANGLE_TABLE[case].chunks_exact(3) {
                    if tri[0] < 0 {
                        break;
                    }
                    mesh.triangles.push([ev[tri[0] as usize], ev[tri[1] as usize], ev[tri[2] as usize]]);
                }
            }
        }
    }
    mesh.remove_small_components(min_component_faces);
    mesh
}

/// Mean and max of `| |v - center| - radius |` over the vertices.
pub fn sphere_distance(mesh: &TexturedMesh, center: &Vec3, radius: f64) -> (f64, f64) {
    if mesh.vertices.is_empty() {
        return (f64::INFINITY, f64::INFINITY);
    }
    let d: Vec<f64> = mesh.vertices.iter().map(|v| ((v - center).norm() - radius).abs()).collect();
    (d.iter().sum::<f64>() / d.len() as f64, d.iter().cloned().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_volume(res: usize) -> (TsdfVolume, f64) {
        let r = 1.0;
        let p = VolumeParams::covering(&Vec3::repeat(-r), &Vec3::repeat(r), res, 4.0, 6).unwrap();
        let mut v = TsdfVolume::new(p).unwrap();
        v.fill_sdf(|x| x.norm() - r, |x| x.map(|c| 0.5 + 0.5 * c.clamp(-1.0, 1.0)));
        (v, r)
    }

    #[test]
    fn tables_agree() {
        for case in 0..256 {
            let mut used = 0u16;
            for &e in TRIANGLE_TABLE[case].iter().take_while(|&&e| e >= 0) {
                used |= 1 << e;
            }
            assert_eq!(used, EDGE_TABLE[case], "case {case}");
        }
    }

    #[test]
    fn analytic_sphere_within_half_voxel() {
        let (v, r) = sphere_volume(32);
        let m = extract_mesh(&v, 0);
        m.validate().unwrap();
        assert!(m.triangles.len() > 100);
        let (_, max) = sphere_distance(&m, &Vec3::zeros(), r);
        assert!(max < 0.5 * v.params.voxel_size, "{max}");
        let lo = v.params.origin;
        let hi = v.params.center(v.params.dims[0] - 1, v.params.dims[1] - 1, v.params.dims[2] - 1);
        assert!(m.vertices.iter().all(|x| (0..3).all(|a| x[a] >= lo[a] && x[a] <= hi[a])));
    }

    #[test]
    fn uniform_volume_is_empty() {
        let p = VolumeParams::covering(&Vec3::zeros(), &Vec3::repeat(1.0), 8, 4.0, 0).unwrap();
        let mut v = TsdfVolume::new(p).unwrap();
        v.fill_sdf(|_| 1.0, |_| Vec3::zeros());
        assert!(extract_mesh(&v, 0).triangles.is_empty());
        let empty = TsdfVolume::new(p).unwrap();
        assert_eq!(empty.tsdf(0), -1.0);
        assert!(extract_mesh(&empty, 0).triangles.is_empty());
    }

    fn plane_view(z_surface: f64) -> FusionInput {
        let cam = Camera::look_at(Vec3::new(0.5, 0.5, -2.0), Vec3::new(0.5, 0.5, 0.0), -Vec3::y(), 20.0, 16, 16);
        let depth = Image::filled(16, 16, 1, 2.0 + z_surface);
        let color = Image::filled(16, 16, 3, 0.25);
        let alpha = Image::filled(16, 16, 1, 1.0);
        FusionInput::new(cam, depth, color, alpha).unwrap()
    }

    #[test]
    fn single_view_is_clamped_distance() {
        let p = VolumeParams::covering(&Vec3::zeros(), &Vec3::repeat(1.0), 10, 2.0, 0).unwrap();
        let vol = tsdf_fuse(&[plane_view(0.5)], p).unwrap();
        let tau = p.truncation();
        for k in 0..p.dims[2] {
            let idx = p.index(5, 5, k);
            let z = p.center(5, 5, k).z;
            let sdf = 0.5 - z;
            if sdf < -tau {
                assert_eq!(vol.weight[idx], 0.0);
                assert_eq!(vol.tsdf(idx), -1.0);
            } else {
                assert!((vol.tsdf(idx) - (sdf / tau).min(1.0)).abs() < 1e-12);
                assert!((vol.color(idx).x - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fusing_twice_equals_once_and_order_invariant() {
        let p = VolumeParams::covering(&Vec3::zeros(), &Vec3::repeat(1.0), 10, 2.0, 0).unwrap();
        let a = plane_view(0.5);
        let b = plane_view(0.4);
        let once = tsdf_fuse(std::slice::from_ref(&a), p).unwrap();
        let twice = tsdf_fuse(&[a.clone(), a.clone()], p).unwrap();
        for i in 0..p.num_voxels() {
            assert!((once.tsdf(i) - twice.tsdf(i)).abs() < 1e-15);
        }
        let ab = tsdf_fuse(&[a.clone(), b.clone()], p).unwrap();
        let ba = tsdf_fuse(&[b, a], p).unwrap();
        for i in 0..p.num_voxels() {
            assert!((ab.tsdf(i) - ba.tsdf(i)).abs() < 1e-12);
        }
    }

    #[test]
    fn small_components_removed() {
        let mut m = TexturedMesh {
            vertices: vec![Vec3::zeros(); 7],
            colors: vec![Vec3::zeros(); 7],
            triangles: vec![[0, 1, 2], [1, 2, 3], [2, 3, 0], [4, 5, 6]],
        };
        m.remove_small_components(2);
        assert_eq!(m.triangles.len(), 3);
        assert_eq!(m.vertices.len(), 4);
        m.validate().unwrap();
    }
}
