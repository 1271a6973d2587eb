//! File formats.
//!
//! Scene file (`.mxgs`), all integers u32 and floats f32, little endian:
//!
//! ```text
//! "MXGS" version sh_degree num_triangles num_surfels num_children num_residual_frames
//! surfels:  mu_l[3N] rot_l[4N] s_l[2N] opacity_raw[N] sh[N*K*3]
//! children: mu_l[3M] rot_l[4M] s_l[3M] opacity_raw[M] sh[M*K*3]
//! tree:     surfel parent_tri[N] surfel child[N] (u32::MAX = none) child parent_surfel[M]
//! perturbation: p2d[3N] p3d[3M] then per residual frame: frame_id p2d[3N] p3d[3M]
//! ```
//!
//! `K = (sh_degree + 1)^2`; SH blocks are coefficient-major, RGB innermost.
//! Frame files (`.mxvf`): `"MXVF" frame_id vertex_count xyz[3V]`.
//! Gradient dumps (`.mxgb`) follow the scene layout with f64 values and no tree.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::backward::GradBuffer;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;
use crate::rig::{FrameResidual, PerturbationField};
use crate::scene::{Child3D, GaussianTree, RiggedMesh, Scene, Surfel2D, Vec2};

pub const SCENE_MAGIC: &[u8; 4] = b"MXGS";
pub const SCENE_VERSION: u32 = 1;
pub const FRAME_MAGIC: &[u8; 4] = b"MXVF";
pub const GRAD_MAGIC: &[u8; 4] = b"MXGB";
const NONE: u32 = u32::MAX;

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f64) {
        self.buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn magic(&mut self, m: &[u8; 4]) -> Result<()> {
        if self.take(4)? != m {
            return Err(Error::Format(format!("expected magic {}", String::from_utf8_lossy(m))));
        }
        Ok(())
    }
    fn vec3(&mut self) -> Result<Vec3> {
        Ok(Vec3::new(self.f32()?, self.f32()?, self.f32()?))
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(())
    }
}

pub fn scene_to_bytes(scene: &Scene) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(SCENE_MAGIC);
    let (ns, nc) = (scene.surfels.len(), scene.children.len());
    for v in [
        SCENE_VERSION,
        scene.sh_degree as u32,
        scene.tree.tri_to_surfels.len() as u32,
        ns as u32,
        nc as u32,
        scene.perturb.per_frame.len() as u32,
    ] {
        w.u32(v);
    }
    let v3 = |w: &mut Writer, v: &Vec3| v.iter().for_each(|x| w.f32(*x));
    scene.surfels.iter().for_each(|s| v3(&mut w, &s.mu_l));
    scene.surfels.iter().for_each(|s| s.rot_l.iter().for_each(|x| w.f32(*x)));
    scene.surfels.iter().for_each(|s| s.s_l.iter().for_each(|x| w.f32(*x)));
    scene.surfels.iter().for_each(|s| w.f32(s.opacity_raw));
    scene.surfels.iter().for_each(|s| s.sh.iter().for_each(|c| v3(&mut w, c)));
    scene.children.iter().for_each(|c| v3(&mut w, &c.mu_l));
    scene.children.iter().for_each(|c| c.rot_l.iter().for_each(|x| w.f32(*x)));
    scene.children.iter().for_each(|c| v3(&mut w, &c.s_l));
    scene.children.iter().for_each(|c| w.f32(c.opacity_raw));
    scene.children.iter().for_each(|c| c.sh.iter().for_each(|v| v3(&mut w, v)));
    scene.surfels.iter().for_each(|s| w.u32(s.parent_tri));
    scene.surfels.iter().for_each(|s| w.u32(s.child.unwrap_or(NONE)));
    scene.children.iter().for_each(|c| w.u32(c.parent_surfel));
    scene.perturb.p2d.iter().for_each(|p| v3(&mut w, p));
    scene.perturb.p3d.iter().for_each(|p| v3(&mut w, p));
    for (t, r) in &scene.perturb.per_frame {
        w.u32(*t);
        r.p2d.iter().for_each(|p| v3(&mut w, p));
        r.p3d.iter().for_each(|p| v3(&mut w, p));
    }
    w.buf
}

pub fn scene_from_bytes(data: &[u8]) -> Result<Scene> {
    let mut r = Reader { data, pos: 0 };
    r.magic(SCENE_MAGIC)?;
    let version = r.u32()?;
    if version != SCENE_VERSION {
        return Err(Error::Format(format!("unsupported scene version {version}")));
    }
    let sh_degree = r.u32()?;
    if sh_degree > crate::sh::MAX_DEGREE as u32 {
        return Err(Error::Format(format!("sh degree {sh_degree}")));
    }
    let sh_degree = sh_degree as u8;
    let ntri = r.u32()? as usize;
    let ns = r.u32()? as usize;
    let nc = r.u32()? as usize;
    let nframes = r.u32()? as usize;
    let k = crate::sh::num_coeffs(sh_degree);
    // reject absurd counts before allocating
    let min_len = 28 + ns * 4 * (3 + 4 + 2 + 1 + 3 * k + 2 + 3) + nc * 4 * (3 + 4 + 3 + 1 + 3 * k + 1 + 3);
    if data.len() < min_len {
        return Err(Error::Format("file shorter than its header claims".into()));
    }
    let mut surfels: Vec<Surfel2D> = (0..ns)
        .map(|_| Surfel2D {
            mu_l: Vec3::zeros(),
            rot_l: [0.0; 4],
            s_l: Vec2::zeros(),
            opacity_raw: 0.0,
            sh: vec![Vec3::zeros(); k],
            parent_tri: 0,
            child: None,
        })
        .collect();
    for s in surfels.iter_mut() {
        s.mu_l = r.vec3()?;
    }
    for s in surfels.iter_mut() {
        for q in s.rot_l.iter_mut() {
            *q = r.f32()?;
        }
    }
    for s in surfels.iter_mut() {
        s.s_l = Vec2::new(r.f32()?, r.f32()?);
    }
    for s in surfels.iter_mut() {
        s.opacity_raw = r.f32()?;
    }
    for s in surfels.iter_mut() {
        for c in s.sh.iter_mut() {
            *c = r.vec3()?;
        }
    }
    let mut children: Vec<Child3D> = (0..nc)
        .map(|_| Child3D {
            mu_l: Vec3::zeros(),
            rot_l: [0.0; 4],
            s_l: Vec3::zeros(),
            opacity_raw: 0.0,
            sh: vec![Vec3::zeros(); k],
            parent_surfel: 0,
        })
        .collect();
    for c in children.iter_mut() {
        c.mu_l = r.vec3()?;
    }
    for c in children.iter_mut() {
        for q in c.rot_l.iter_mut() {
            *q = r.f32()?;
        }
    }
    for c in children.iter_mut() {
        c.s_l = r.vec3()?;
    }
    for c in children.iter_mut() {
        c.opacity_raw = r.f32()?;
    }
    for c in children.iter_mut() {
        for v in c.sh.iter_mut() {
            *v = r.vec3()?;
        }
    }
    for s in surfels.iter_mut() {
        s.parent_tri = r.u32()?;
        if s.parent_tri as usize >= ntri {
            return Err(Error::Format("surfel triangle index out of range".into()));
        }
    }
    for s in surfels.iter_mut() {
        let c = r.u32()?;
        s.child = (c != NONE).then_some(c);
    }
    for c in children.iter_mut() {
        c.parent_surfel = r.u32()?;
    }
    let mut perturb = PerturbationField::zeros(ns, nc);
    for p in perturb.p2d.iter_mut() {
        *p = r.vec3()?;
    }
    for p in perturb.p3d.iter_mut() {
        *p = r.vec3()?;
    }
    let mut per_frame = BTreeMap::new();
    for _ in 0..nframes {
        let t = r.u32()?;
        let p2d = (0..ns).map(|_| r.vec3()).collect::<Result<_>>()?;
        let p3d = (0..nc).map(|_| r.vec3()).collect::<Result<_>>()?;
        per_frame.insert(t, FrameResidual { p2d, p3d });
    }
    perturb.per_frame = per_frame;
    r.finish()?;
    let tree = GaussianTree::build(ntri, &surfels);
    let scene = Scene {
        sh_degree,
        surfels,
        children,
        tree,
        perturb,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(scene: &Scene, path: &Path) -> Result<()> {
    std::fs::write(path, scene_to_bytes(scene))?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<Scene> {
    let mut data = Vec::new();
    open(path)?.read_to_end(&mut data)?;
    scene_from_bytes(&data)
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn frame_to_bytes(t: u32, verts: &[Vec3]) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(FRAME_MAGIC);
    w.u32(t);
    w.u32(verts.len() as u32);
    verts.iter().for_each(|v| v.iter().for_each(|x| w.f32(*x)));
    w.buf
}

pub fn frame_from_bytes(data: &[u8]) -> Result<(u32, Vec<Vec3>)> {
    let mut r = Reader { data, pos: 0 };
    r.magic(FRAME_MAGIC)?;
    let t = r.u32()?;
    let n = r.u32()? as usize;
    if data.len() != 12 + 12 * n {
        return Err(Error::Format("frame file size does not match vertex count".into()));
    }
    let v = (0..n).map(|_| r.vec3()).collect::<Result<_>>()?;
    Ok((t, v))
}

pub fn write_obj(path: &Path, verts: &[Vec3], tris: &[[u32; 3]]) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    for v in verts {
        writeln!(f, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for t in tris {
        writeln!(f, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    f.flush()?;
    Ok(())
}

/// Reads `v` and `f` records; polygon faces are fan-triangulated and
/// texture/normal indices ignored.
pub fn read_obj(path: &Path) -> Result<(Vec<Vec3>, Vec<[u32; 3]>)> {
    let f = BufReader::new(open(path)?);
    let mut verts = Vec::new();
    let mut tris = Vec::new();
    for (ln, line) in f.lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        let bad = |what: &str| Error::Format(format!("{}:{}: {what}", path.display(), ln + 1));
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it.take(3).map(|s| s.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad vertex"))?;
                if c.len() != 3 {
                    return Err(bad("vertex needs 3 coordinates"));
                }
                verts.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|s| {
                        let i: i64 = s.split('/').next().unwrap_or("").parse().map_err(|_| bad("bad face index"))?;
                        let i = if i < 0 { verts.len() as i64 + i } else { i - 1 };
                        u32::try_from(i).map_err(|_| bad("face index out of range"))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(bad("face needs 3 vertices"));
                }
                for k in 1..idx.len() - 1 {
                    tris.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((verts, tris))
}

/// Canonical OBJ plus every `.mxvf` file in `frames_dir` (if given). Without
/// animation frames the canonical pose is frame 0.
pub fn load_rigged_mesh(obj: &Path, frames_dir: Option<&Path>) -> Result<RiggedMesh> {
    let (verts, tris) = read_obj(obj)?;
    let mut mesh = RiggedMesh::new_static(verts, tris);
    if let Some(dir) = frames_dir {
        if !dir.is_dir() {
            return Err(Error::MissingFile(dir.to_path_buf()));
        }
        let mut paths: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "mxvf"))
            .collect();
        paths.sort();
        if !paths.is_empty() {
            mesh.frames.clear();
        }
        for p in paths {
            let mut data = Vec::new();
            open(&p)?.read_to_end(&mut data)?;
            let (t, v) = frame_from_bytes(&data)?;
            mesh.frames.insert(t, v);
        }
    }
    mesh.validate()?;
    Ok(mesh)
}

pub fn save_frames(dir: &Path, mesh: &RiggedMesh) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (t, v) in &mesh.frames {
        std::fs::write(dir.join(format!("frame_{t:05}.mxvf")), frame_to_bytes(*t, v))?;
    }
    Ok(())
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit PNG of a 1- or 3-channel image, clamped to [0, 1].
pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let color = match img.channels {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => return Err(Error::InvalidParameter(format!("cannot write {c}-channel PNG"))),
    };
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), img.width, img.height);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img.data.iter().map(|&v| to_u8(v)).collect();
    let mut w = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
    w.write_image_data(&bytes).map_err(|e| Error::Format(e.to_string()))?;
    Ok(())
}

/// Reads an 8-bit PNG as a 3-channel image in [0, 1]; alpha is dropped and
/// gray is replicated.
pub fn read_png(path: &Path) -> Result<Image> {
    let mut dec = png::Decoder::new(BufReader::new(open(path)?));
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = dec.read_info().map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Format("png too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Format(e.to_string()))?;
    let ch = info.color_type.samples();
    let mut img = Image::new(info.width, info.height, 3);
    for p in 0..img.num_pixels() {
        let px = &buf[p * ch..p * ch + ch];
        let rgb = match ch {
            1 | 2 => [px[0]; 3],
            _ => [px[0], px[1], px[2]],
        };
        for c in 0..3 {
            img.data[p * 3 + c] = rgb[c] as f64 / 255.0;
        }
    }
    Ok(img)
}

/// Little-endian PFM ("Pf" gray, "PF" color), rows stored bottom to top.
pub fn write_pfm(path: &Path, img: &Image) -> Result<()> {
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::InvalidParameter(format!("cannot write {c}-channel PFM"))),
    };
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "{tag}\n{} {}\n-1.0\n", img.width, img.height)?;
    let row = img.width as usize * img.channels;
    for y in (0..img.height as usize).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            f.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<Image> {
    let mut data = Vec::new();
    open(path)?.read_to_end(&mut data)?;
    let bad = || Error::Format(format!("{}: malformed PFM", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad());
        }
        fields.push(String::from_utf8_lossy(&data[start..pos]).to_string());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad()),
    };
    let w: u32 = fields[1].parse().map_err(|_| bad())?;
    let h: u32 = fields[2].parse().map_err(|_| bad())?;
    let scale: f64 = fields[3].parse().map_err(|_| bad())?;
    let n = w as usize * h as usize * channels;
    if data.len() < pos + 4 * n {
        return Err(bad());
    }
    let mut img = Image::new(w, h, channels);
    let row = w as usize * channels;
    for (k, chunk) in data[pos..pos + 4 * n].chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().unwrap();
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (ry, rest) = (k / row, k % row);
        img.data[(h as usize - 1 - ry) * row + rest] = v as f64;
    }
    Ok(img)
}

/// ASCII PLY with per-vertex RGB.
pub fn write_ply(path: &Path, verts: &[Vec3], colors: &[Vec3], tris: &[[u32; 3]]) -> Result<()> {
    if verts.len() != colors.len() {
        return Err(Error::DimensionMismatch("vertex colors".into()));
    }
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "ply\nformat ascii 1.0\nelement vertex {}", verts.len())?;
    writeln!(f, "property float x\nproperty float y\nproperty float z")?;
    writeln!(f, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    writeln!(f, "element face {}\nproperty list uchar int vertex_indices\nend_header", tris.len())?;
    for (v, c) in verts.iter().zip(colors) {
        writeln!(f, "{} {} {} {} {} {}", v.x as f32, v.y as f32, v.z as f32, to_u8(c.x), to_u8(c.y), to_u8(c.z))?;
    }
    for t in tris {
        writeln!(f, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    f.flush()?;
    Ok(())
}

/// Reads the vertex positions and faces of an ASCII PLY written by [`write_ply`].
pub fn read_ply(path: &Path) -> Result<(Vec<Vec3>, Vec<[u32; 3]>)> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let bad = || Error::Format(format!("{}: malformed PLY", path.display()));
    let mut lines = text.lines();
    let (mut nv, mut nf) = (0usize, 0usize);
    for line in lines.by_ref() {
        let p: Vec<&str> = line.split_whitespace().collect();
        match p.as_slice() {
            ["element", "vertex", n] => nv = n.parse().map_err(|_| bad())?,
            ["element", "face", n] => nf = n.parse().map_err(|_| bad())?,
            ["end_header"] => break,
            _ => {}
        }
    }
    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let c: Vec<f64> = lines.next().ok_or_else(bad)?.split_whitespace().take(3).map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        verts.push(Vec3::new(c[0], c[1], c[2]));
    }
    let mut tris = Vec::with_capacity(nf);
    for _ in 0..nf {
        let c: Vec<u32> = lines.next().ok_or_else(bad)?.split_whitespace().skip(1).map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?;
        if c.len() != 3 {
            return Err(bad());
        }
        tris.push([c[0], c[1], c[2]]);
    }
    Ok((verts, tris))
}

pub fn grad_to_bytes(g: &GradBuffer) -> Vec<u8> {
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(GRAD_MAGIC);
    w.u32(SCENE_VERSION);
    let k = g.surfels.first().map(|s| s.sh.len()).or_else(|| g.children.first().map(|c| c.sh.len())).unwrap_or(0);
    w.u32(k as u32);
    w.u32(g.surfels.len() as u32);
    w.u32(g.children.len() as u32);
    for s in &g.surfels {
        s.mu_l.iter().chain(s.rot_l.iter()).chain(s.s_l.iter()).for_each(|v| w.f64(*v));
        w.f64(s.opacity_raw);
        s.sh.iter().flat_map(|c| c.iter()).for_each(|v| w.f64(*v));
        s.p2d.iter().for_each(|v| w.f64(*v));
    }
    for c in &g.children {
        c.mu_l.iter().chain(c.rot_l.iter()).chain(c.s_l.iter()).for_each(|v| w.f64(*v));
        w.f64(c.opacity_raw);
        c.sh.iter().flat_map(|c| c.iter()).for_each(|v| w.f64(*v));
        c.p3d.iter().for_each(|v| w.f64(*v));
    }
    w.buf
}

pub fn grad_from_bytes(data: &[u8]) -> Result<GradBuffer> {
    use crate::backward::{ChildGrad, SurfelGrad};
    let mut r = Reader { data, pos: 0 };
    r.magic(GRAD_MAGIC)?;
    if r.u32()? != SCENE_VERSION {
        return Err(Error::Format("unsupported gradient dump version".into()));
    }
    let k = r.u32()? as usize;
    let ns = r.u32()? as usize;
    let nc = r.u32()? as usize;
    if data.len() != 20 + 8 * (ns * (13 + 3 * k) + nc * (14 + 3 * k)) {
        return Err(Error::Format("gradient dump size mismatch".into()));
    }
    let v3 = |r: &mut Reader| -> Result<Vec3> { Ok(Vec3::new(r.f64()?, r.f64()?, r.f64()?)) };
    let mut g = GradBuffer::default();
    for _ in 0..ns {
        let mu_l = v3(&mut r)?;
        let rot_l = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
        let s_l = Vec2::new(r.f64()?, r.f64()?);
        let opacity_raw = r.f64()?;
        let sh = (0..k).map(|_| v3(&mut r)).collect::<Result<_>>()?;
        let p2d = v3(&mut r)?;
        g.surfels.push(SurfelGrad { mu_l, rot_l, s_l, opacity_raw, sh, p2d });
    }
    for _ in 0..nc {
        let mu_l = v3(&mut r)?;
        let rot_l = [r.f64()?, r.f64()?, r.f64()?, r.f64()?];
        let s_l = v3(&mut r)?;
        let opacity_raw = r.f64()?;
        let sh = (0..k).map(|_| v3(&mut r)).collect::<Result<_>>()?;
        let p3d = v3(&mut r)?;
        g.children.push(ChildGrad { mu_l, rot_l, s_l, opacity_raw, sh, p3d });
    }
    g.screen_grad = vec![0.0; ns];
    g.screen_radius = vec![0.0; ns];
    g.visible = vec![false; ns];
    r.finish()?;
    Ok(g)
}
