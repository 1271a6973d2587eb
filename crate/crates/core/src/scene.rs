//! Primitive types, the triangle -> surfel -> child tree, and scene setup.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::math::{logit, quat_norm, Quat, Vec3, IDENTITY_QUAT};
use crate::rig::PerturbationField;
use crate::sh;

pub type Vec2 = Vector2<f64>;

/// Minimum canonical triangle area accepted by [`RiggedMesh::validate`].
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

/// A triangle mesh with per-frame vertex positions.
#[derive(Clone, Debug, PartialEq)]
pub struct RiggedMesh {
    pub vertices_canonical: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub frames: BTreeMap<u32, Vec<Vec3>>,
}

impl RiggedMesh {
    /// Mesh whose only frame (id 0) is the canonical pose.
    pub fn new_static(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Self {
        let mut frames = BTreeMap::new();
        frames.insert(0, vertices.clone());
        Self {
            vertices_canonical: vertices,
            triangles,
            frames,
        }
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn frame(&self, t: u32) -> Result<&[Vec3]> {
        self.frames
            .get(&t)
            .map(|v| v.as_slice())
            .ok_or(Error::UnknownFrame(t))
    }

    pub fn triangle_area(verts: &[Vec3], tri: &[u32; 3]) -> f64 {
        let a = verts[tri[0] as usize];
        let b = verts[tri[1] as usize];
        let c = verts[tri[2] as usize];
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices_canonical.len();
        for (ti, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                if v as usize >= n {
                    return Err(Error::InvalidMesh(format!(
                        "triangle {ti} references vertex {v} but the mesh has {n}"
                    )));
                }
            }
            let area = Self::triangle_area(&self.vertices_canonical, tri);
            if !(area > MIN_TRIANGLE_AREA) {
                return Err(Error::DegenerateTriangle { tri: ti, area });
            }
        }
        for (t, verts) in &self.frames {
            if verts.len() != n {
                return Err(Error::InvalidMesh(format!(
                    "frame {t} has {} vertices, expected {n}",
                    verts.len()
                )));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounding box of the canonical vertices.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in self.frames.values().flatten().chain(&self.vertices_canonical) {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }
}

/// A flat Gaussian disc bound to a mesh triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct Surfel2D {
    pub mu_l: Vec3,
    pub rot_l: Quat,
    pub s_l: Vec2,
    pub opacity_raw: f64,
    pub sh: Vec<Vec3>,
    pub parent_tri: u32,
    pub child: Option<u32>,
}

impl Surfel2D {
    pub fn scales(&self) -> Vec2 {
        self.s_l.map(f64::exp)
    }
}

/// A volumetric Gaussian attached to a parent surfel for color compensation.
#[derive(Clone, Debug, PartialEq)]
pub struct Child3D {
    pub mu_l: Vec3,
    pub rot_l: Quat,
    pub s_l: Vec3,
    pub opacity_raw: f64,
    pub sh: Vec<Vec3>,
    pub parent_surfel: u32,
}

impl Child3D {
    pub fn scales(&self) -> Vec3 {
        self.s_l.map(f64::exp)
    }
}

/// Triangle -> surfels -> optional child index structure.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GaussianTree {
    pub tri_to_surfels: Vec<Vec<u32>>,
    pub surfel_to_child: Vec<Option<u32>>,
}

impl GaussianTree {
    pub fn build(num_triangles: usize, surfels: &[Surfel2D]) -> Self {
        let mut tri_to_surfels = vec![Vec::new(); num_triangles];
        for (i, s) in surfels.iter().enumerate() {
            tri_to_surfels[s.parent_tri as usize].push(i as u32);
        }
        Self {
            tri_to_surfels,
            surfel_to_child: surfels.iter().map(|s| s.child).collect(),
        }
    }

    /// Surfels bound to the same triangle as `surfel`, including itself.
    pub fn siblings<'a>(&'a self, surfels: &[Surfel2D], surfel: u32) -> &'a [u32] {
        &self.tri_to_surfels[surfels[surfel as usize].parent_tri as usize]
    }

    /// Closes a surfel set over triangle siblings.
    pub fn sibling_closure(&self, surfels: &[Surfel2D], set: &BTreeSet<u32>) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        for &s in set {
            out.extend(self.siblings(surfels, s).iter().copied());
        }
        out
    }
}

/// The trainable scene: primitives, their tree, and the perturbation tables.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub sh_degree: u8,
    pub surfels: Vec<Surfel2D>,
    pub children: Vec<Child3D>,
    pub tree: GaussianTree,
    pub perturb: PerturbationField,
}

/// One mid-gray, unit-scale, half-opaque surfel at the centroid of every triangle.
pub fn init_scene(mesh: &RiggedMesh, sh_degree: u8) -> Result<(Vec<Surfel2D>, GaussianTree)> {
    if sh_degree > sh::MAX_DEGREE {
        return Err(Error::InvalidParameter(format!(
            "sh degree {sh_degree} exceeds {}",
            sh::MAX_DEGREE
        )));
    }
    mesh.validate()?;
    let ncoef = sh::num_coeffs(sh_degree);
    let surfels: Vec<Surfel2D> = (0..mesh.num_triangles())
        .map(|t| Surfel2D {
            mu_l: Vec3::zeros(),
            rot_l: IDENTITY_QUAT,
            s_l: Vec2::new(1.0f64.ln(), 1.0f64.ln()),
            opacity_raw: logit(0.5),
            sh: vec![Vec3::zeros(); ncoef],
            parent_tri: t as u32,
            child: None,
        })
        .collect();
    let tree = GaussianTree::build(mesh.num_triangles(), &surfels);
    Ok((surfels, tree))
}

impl Scene {
    pub fn from_mesh(mesh: &RiggedMesh, sh_degree: u8) -> Result<Self> {
        let (surfels, tree) = init_scene(mesh, sh_degree)?;
        let perturb = PerturbationField::zeros(surfels.len(), 0);
        Ok(Self {
            sh_degree,
            surfels,
            children: Vec::new(),
            tree,
            perturb,
        })
    }

    pub fn num_triangles(&self) -> usize {
        self.tree.tri_to_surfels.len()
    }

    /// Attaches one child to every selected surfel. Fails without mutating the
    /// scene if any index is invalid or already has a child.
    pub fn spawn_children(&mut self, selected: &BTreeSet<u32>) -> Result<usize> {
        for &s in selected {
            let surfel = self.surfels.get(s as usize).ok_or(Error::OutOfRange {
                what: "surfel",
                index: s as usize,
                len: self.surfels.len(),
            })?;
            if surfel.child.is_some() {
                return Err(Error::DuplicateChild(s));
            }
        }
        for &s in selected {
            let parent = &self.surfels[s as usize];
            let a = parent.scales();
            let child = Child3D {
                mu_l: parent.mu_l,
                rot_l: parent.rot_l,
                s_l: Vec3::new(parent.s_l.x, parent.s_l.y, (0.5 * (a.x + a.y)).ln()),
                opacity_raw: parent.opacity_raw,
                sh: parent.sh.clone(),
                parent_surfel: s,
            };
            let ci = self.children.len() as u32;
            self.children.push(child);
            self.surfels[s as usize].child = Some(ci);
            self.tree.surfel_to_child[s as usize] = Some(ci);
        }
        self.perturb.resize(self.surfels.len(), self.children.len());
        Ok(selected.len())
    }

    /// Drops every child (used by the two-dimensional-only code paths and tests).
    pub fn without_children(&self) -> Scene {
        let mut out = self.clone();
        out.children.clear();
        for s in &mut out.surfels {
            s.child = None;
        }
        out.tree.surfel_to_child.iter_mut().for_each(|c| *c = None);
        out.perturb.resize(out.surfels.len(), 0);
        out
    }

    /// Checks every structural invariant of the scene.
    pub fn validate(&self) -> Result<()> {
        let ns = self.surfels.len();
        let nt = self.num_triangles();
        let ncoef = sh::num_coeffs(self.sh_degree);
        let mut seen = vec![0u32; ns];
        for (t, list) in self.tree.tri_to_surfels.iter().enumerate() {
            for &s in list {
                let si = s as usize;
                if si >= ns {
                    return Err(Error::Inconsistent(format!("tree lists missing surfel {s}")));
                }
                if self.surfels[si].parent_tri as usize != t {
                    return Err(Error::Inconsistent(format!(
                        "surfel {s} listed under triangle {t} but bound to {}",
                        self.surfels[si].parent_tri
                    )));
                }
                seen[si] += 1;
            }
        }
        if let Some(s) = seen.iter().position(|&c| c != 1) {
            return Err(Error::Inconsistent(format!(
                "surfel {s} appears {} times in the tree",
                seen[s]
            )));
        }
        if self.tree.surfel_to_child.len() != ns {
            return Err(Error::Inconsistent("surfel_to_child length".into()));
        }
        for (si, s) in self.surfels.iter().enumerate() {
            if s.parent_tri as usize >= nt {
                return Err(Error::Inconsistent(format!("surfel {si} has invalid triangle")));
            }
            if (quat_norm(&s.rot_l) - 1.0).abs() > 1e-6 {
                return Err(Error::Inconsistent(format!("surfel {si} rotation not unit")));
            }
            if s.sh.len() != ncoef {
                return Err(Error::Inconsistent(format!("surfel {si} sh block size")));
            }
            if s.child != self.tree.surfel_to_child[si] {
                return Err(Error::Inconsistent(format!("surfel {si} child mismatch")));
            }
            if let Some(c) = s.child {
                match self.children.get(c as usize) {
                    Some(ch) if ch.parent_surfel as usize == si => {}
                    _ => {
                        return Err(Error::Inconsistent(format!(
                            "surfel {si} child {c} back-reference broken"
                        )))
                    }
                }
            }
        }
        for (ci, c) in self.children.iter().enumerate() {
            let p = c.parent_surfel as usize;
            if p >= ns || self.surfels[p].child != Some(ci as u32) {
                return Err(Error::Inconsistent(format!("child {ci} parent link broken")));
            }
            if (quat_norm(&c.rot_l) - 1.0).abs() > 1e-6 {
                return Err(Error::Inconsistent(format!("child {ci} rotation not unit")));
            }
            if c.sh.len() != ncoef {
                return Err(Error::Inconsistent(format!("child {ci} sh block size")));
            }
        }
        self.perturb.validate(ns, self.children.len())
    }
}
