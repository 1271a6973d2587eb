//! Triangle frames and the local-to-global mapping of bound primitives.
//!
//! A surfel lives in the frame of its triangle: `mu_g = lambda * R * mu_l + T + p2d(t)`,
//! `R_g = R * R(r_l)`, `s_g = lambda * exp(s_l)`. A child uses its parent's global
//! position in place of the centroid.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::math::{quat_to_mat, quat_to_mat_backward, sigmoid, mat_to_quat, Mat3, Quat, Vec3};
use crate::scene::{Child3D, RiggedMesh, Surfel2D, MIN_TRIANGLE_AREA};

/// Rotation, scale and centroid of one triangle at one animation frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TriangleFrame {
    pub rotation: Mat3,
    pub lambda: f64,
    pub centroid: Vec3,
}

/// Builds the frame of triangle `tri` at frame `t`.
///
/// Column 0 is the unit edge v0 -> v1, column 2 the unit normal and column 1
/// their cross product `normal x edge`. `lambda` averages the edge length and
/// the height of v2 over that edge.
pub fn triangle_frame(mesh: &RiggedMesh, tri: usize, t: u32) -> Result<TriangleFrame> {
    let verts = mesh.frame(t)?;
    let [a, b, c] = mesh.triangles.get(tri).copied().ok_or(Error::OutOfRange {
        what: "triangle",
        index: tri,
        len: mesh.triangles.len(),
    })?;
    frame_from_vertices(
        &verts[a as usize],
        &verts[b as usize],
        &verts[c as usize],
    )
    .ok_or(Error::DegenerateFrame { tri, frame: t })
}

pub fn frame_from_vertices(v0: &Vec3, v1: &Vec3, v2: &Vec3) -> Option<TriangleFrame> {
    let edge = v1 - v0;
    let cross = edge.cross(&(v2 - v0));
    let area2 = cross.norm();
    let elen = edge.norm();
    if !(0.5 * area2 > MIN_TRIANGLE_AREA) || elen == 0.0 {
        return None;
    }
    let e = edge / elen;
    let n = cross / area2;
    let m = n.cross(&e);
    let height = area2 / elen;
    Some(TriangleFrame {
        rotation: Mat3::from_columns(&[e, m, n]),
        lambda: 0.5 * (elen + height),
        centroid: (v0 + v1 + v2) / 3.0,
    })
}

/// Frames of every triangle of the mesh at frame `t`.
pub fn all_frames(mesh: &RiggedMesh, t: u32) -> Result<Vec<TriangleFrame>> {
    (0..mesh.num_triangles())
        .map(|i| triangle_frame(mesh, i, t))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    Surfel,
    Child,
}

/// A primitive expressed in world space for one frame.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalGaussian {
    pub mu: Vec3,
    pub rotation: Mat3,
    /// Surfels leave the third component at zero.
    pub scale: Vec3,
    pub opacity: f64,
    pub sh: Vec<Vec3>,
    pub kind: PrimitiveKind,
    pub source: u32,
}

impl GlobalGaussian {
    pub fn quaternion(&self) -> Quat {
        mat_to_quat(&self.rotation)
    }
}

/// Per-frame residual offsets, added on top of the shared base tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameResidual {
    pub p2d: Vec<Vec3>,
    pub p3d: Vec<Vec3>,
}

/// Learnable positional offsets for surfels and children.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PerturbationField {
    pub p2d: Vec<Vec3>,
    pub p3d: Vec<Vec3>,
    pub per_frame: BTreeMap<u32, FrameResidual>,
}

impl PerturbationField {
    pub fn zeros(num_surfels: usize, num_children: usize) -> Self {
        Self {
            p2d: vec![Vec3::zeros(); num_surfels],
            p3d: vec![Vec3::zeros(); num_children],
            per_frame: BTreeMap::new(),
        }
    }

    pub fn p2d_at(&self, t: u32, i: usize) -> Vec3 {
        let base = self.p2d[i];
        match self.per_frame.get(&t) {
            Some(r) => base + r.p2d[i],
            None => base,
        }
    }

    pub fn p3d_at(&self, t: u32, i: usize) -> Vec3 {
        let base = self.p3d[i];
        match self.per_frame.get(&t) {
            Some(r) => base + r.p3d[i],
            None => base,
        }
    }

    /// Adds an all-zero residual table for frame `t` if none exists.
    pub fn ensure_frame(&mut self, t: u32) {
        let (ns, nc) = (self.p2d.len(), self.p3d.len());
        self.per_frame.entry(t).or_insert_with(|| FrameResidual {
            p2d: vec![Vec3::zeros(); ns],
            p3d: vec![Vec3::zeros(); nc],
        });
    }

    /// Grows (with zeros) or truncates every table to the given counts.
    pub fn resize(&mut self, num_surfels: usize, num_children: usize) {
        self.p2d.resize(num_surfels, Vec3::zeros());
        self.p3d.resize(num_children, Vec3::zeros());
        for r in self.per_frame.values_mut() {
            r.p2d.resize(num_surfels, Vec3::zeros());
            r.p3d.resize(num_children, Vec3::zeros());
        }
    }

    /// Rebuilds the surfel tables so that new entry `i` copies old entry `sources[i]`.
    pub fn remap_surfels(&mut self, sources: &[usize]) {
        self.p2d = sources.iter().map(|&s| self.p2d[s]).collect();
        for r in self.per_frame.values_mut() {
            r.p2d = sources.iter().map(|&s| r.p2d[s]).collect();
        }
    }

    pub fn clear(&mut self) {
        self.p2d.iter_mut().for_each(|p| *p = Vec3::zeros());
        self.p3d.iter_mut().for_each(|p| *p = Vec3::zeros());
        self.per_frame.clear();
    }

    pub fn validate(&self, num_surfels: usize, num_children: usize) -> Result<()> {
        let ok = self.p2d.len() == num_surfels
            && self.p3d.len() == num_children
            && self
                .per_frame
                .values()
                .all(|r| r.p2d.len() == num_surfels && r.p3d.len() == num_children);
        if ok {
            Ok(())
        } else {
            Err(Error::Inconsistent("perturbation table sizes".into()))
        }
    }
}

pub fn surfel_to_global(
    s: &Surfel2D,
    index: u32,
    f: &TriangleFrame,
    p: &PerturbationField,
    t: u32,
) -> GlobalGaussian {
    let a = s.scales();
    GlobalGaussian {
        mu: f.lambda * f.rotation * s.mu_l + f.centroid + p.p2d_at(t, index as usize),
        rotation: f.rotation * quat_to_mat(&s.rot_l),
        scale: Vec3::new(f.lambda * a.x, f.lambda * a.y, 0.0),
        opacity: sigmoid(s.opacity_raw),
        sh: s.sh.clone(),
        kind: PrimitiveKind::Surfel,
        source: index,
    }
}

/// `f` is the frame of the parent surfel's triangle.
pub fn child_to_global(
    c: &Child3D,
    index: u32,
    parent_global_mu: &Vec3,
    f: &TriangleFrame,
    p: &PerturbationField,
    t: u32,
) -> GlobalGaussian {
    GlobalGaussian {
        mu: f.lambda * f.rotation * c.mu_l + parent_global_mu + p.p3d_at(t, index as usize),
        rotation: f.rotation * quat_to_mat(&c.rot_l),
        scale: f.lambda * c.scales(),
        opacity: sigmoid(c.opacity_raw),
        sh: c.sh.clone(),
        kind: PrimitiveKind::Child,
        source: index,
    }
}

/// Gradient of a loss with respect to a [`GlobalGaussian`]'s fields.
#[derive(Clone, Debug, Default)]
pub struct GlobalGrad {
    pub mu: Vec3,
    pub rotation: Mat3,
    pub scale: Vec3,
    pub opacity: f64,
}

/// Local-parameter gradients produced by [`global_backward`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalGrad {
    pub mu_l: Vec3,
    pub rot_l: Quat,
    pub s_l: Vec3,
    pub opacity_raw: f64,
    /// Gradient of the perturbation offset, equal to the gradient on the
    /// anchor (centroid or parent position).
    pub offset: Vec3,
}

/// Shared backward of the surfel and child transforms. `s_l` is padded to
/// three components for surfels (the padding receives no gradient).
pub fn global_backward(
    mu_l: &Vec3,
    rot_l: &Quat,
    s_l: &Vec3,
    opacity_raw: f64,
    f: &TriangleFrame,
    g: &GlobalGrad,
) -> LocalGrad {
    let _ = mu_l;
    let d_rq = f.rotation.transpose() * g.rotation;
    let op = sigmoid(opacity_raw);
    LocalGrad {
        mu_l: f.lambda * f.rotation.transpose() * g.mu,
        rot_l: quat_to_mat_backward(rot_l, &d_rq),
        s_l: Vec3::new(
            f.lambda * s_l.x.exp() * g.scale.x,
            f.lambda * s_l.y.exp() * g.scale.y,
            f.lambda * s_l.z.exp() * g.scale.z,
        ),
        opacity_raw: g.opacity * op * (1.0 - op),
        offset: g.mu,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::IDENTITY_QUAT;
    use crate::scene::Vec2;

    fn surfel(mu: Vec3, q: Quat, s: Vec2) -> Surfel2D {
        Surfel2D {
            mu_l: mu,
            rot_l: q,
            s_l: s,
            opacity_raw: 0.3,
            sh: vec![Vec3::zeros()],
            parent_tri: 0,
            child: None,
        }
    }

    #[test]
    fn right_triangle_frame() {
        let f = frame_from_vertices(&Vec3::zeros(), &Vec3::x(), &Vec3::y()).unwrap();
        assert!((f.rotation - Mat3::identity()).norm() < 1e-15);
        assert!((f.lambda - 1.0).abs() < 1e-15);
        assert!((f.centroid - Vec3::new(1.0 / 3.0, 1.0 / 3.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn scaled_triangle_doubles_lambda() {
        let v = [Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, -0.4, 0.5), Vec3::new(0.3, 0.9, -0.2)];
        let f1 = frame_from_vertices(&v[0], &v[1], &v[2]).unwrap();
        let f2 = frame_from_vertices(&(v[0] * 2.0), &(v[1] * 2.0), &(v[2] * 2.0)).unwrap();
        // recompute edge and height by hand
        let e = (v[1] - v[0]).norm();
        let h = (v[1] - v[0]).cross(&(v[2] - v[0])).norm() / e;
        assert!((f1.lambda - 0.5 * (e + h)).abs() < 1e-14);
        assert!((f2.lambda - 2.0 * f1.lambda).abs() < 1e-14);
        assert!((f2.rotation - f1.rotation).norm() < 1e-14);
    }

    #[test]
    fn degenerate_frame_is_rejected() {
        let mesh = RiggedMesh::new_static(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        );
        let mut mesh = mesh;
        mesh.frames.insert(3, vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0]);
        match triangle_frame(&mesh, 0, 3) {
            Err(Error::DegenerateFrame { tri: 0, frame: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(triangle_frame(&mesh, 0, 9), Err(Error::UnknownFrame(9))));
    }

    #[test]
    fn origin_surfel_sits_on_centroid() {
        let f = frame_from_vertices(&Vec3::zeros(), &Vec3::new(2.0, 0.0, 0.0), &Vec3::new(0.0, 1.0, 1.0)).unwrap();
        let p = PerturbationField::zeros(1, 0);
        let g = surfel_to_global(&surfel(Vec3::zeros(), IDENTITY_QUAT, Vec2::zeros()), 0, &f, &p, 0);
        assert_eq!(g.mu, f.centroid);
        // identity local rotation gives the triangle rotation itself
        assert!((g.rotation - f.rotation).norm() < 1e-15);
        assert!((g.opacity - sigmoid(0.3)).abs() < 1e-15);
    }

    #[test]
    fn doubling_lambda_doubles_offsets_and_scales() {
        let f = frame_from_vertices(&Vec3::zeros(), &Vec3::x(), &Vec3::y()).unwrap();
        let f2 = TriangleFrame { lambda: 2.0 * f.lambda, ..f };
        let mut p = PerturbationField::zeros(1, 0);
        p.p2d[0] = Vec3::new(0.05, -0.1, 0.2);
        let s = surfel(Vec3::new(0.3, -0.2, 0.1), [0.9, 0.1, 0.2, -0.3], Vec2::new(-0.5, 0.2));
        let g1 = surfel_to_global(&s, 0, &f, &p, 0);
        let g2 = surfel_to_global(&s, 0, &f2, &p, 0);
        let o1 = g1.mu - f.centroid - p.p2d[0];
        let o2 = g2.mu - f.centroid - p.p2d[0];
        assert!((o2 - 2.0 * o1).norm() < 1e-15);
        assert!((g2.scale - 2.0 * g1.scale).norm() < 1e-15);
    }

    #[test]
    fn child_follows_parent() {
        let f = TriangleFrame {
            rotation: Mat3::identity(),
            lambda: 2.0,
            centroid: Vec3::zeros(),
        };
        let mut p = PerturbationField::zeros(1, 1);
        let c = Child3D {
            mu_l: Vec3::zeros(),
            rot_l: IDENTITY_QUAT,
            s_l: Vec3::zeros(),
            opacity_raw: 0.0,
            sh: vec![Vec3::zeros()],
            parent_surfel: 0,
        };
        let parent = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(child_to_global(&c, 0, &parent, &f, &p, 0).mu, parent);
        let d = Vec3::new(-0.5, 0.25, 4.0);
        assert_eq!(child_to_global(&c, 0, &(parent + d), &f, &p, 0).mu, parent + d);
        p.p3d[0] = Vec3::new(0.1, 0.0, 0.0);
        assert_eq!(
            child_to_global(&c, 0, &parent, &f, &p, 0).mu,
            parent + Vec3::new(0.1, 0.0, 0.0)
        );
    }

    #[test]
    fn per_frame_residual_adds_to_base() {
        let mut p = PerturbationField::zeros(2, 1);
        p.p2d[1] = Vec3::new(1.0, 0.0, 0.0);
        p.ensure_frame(5);
        p.per_frame.get_mut(&5).unwrap().p2d[1] = Vec3::new(0.0, 2.0, 0.0);
        assert_eq!(p.p2d_at(5, 1), Vec3::new(1.0, 2.0, 0.0));
        assert_eq!(p.p2d_at(4, 1), Vec3::new(1.0, 0.0, 0.0));
        p.validate(2, 1).unwrap();
        assert!(p.validate(3, 1).is_err());
    }

    #[test]
    fn global_backward_matches_finite_differences() {
        let f = frame_from_vertices(&Vec3::new(0.1, 0.0, 0.3), &Vec3::new(1.2, 0.1, -0.2), &Vec3::new(0.0, 0.8, 0.4)).unwrap();
        let p = PerturbationField::zeros(1, 0);
        let s = surfel(Vec3::new(0.3, -0.2, 0.1), [0.9, 0.1, 0.2, -0.3], Vec2::new(-0.5, 0.2));
        let gm = Vec3::new(0.4, -1.0, 0.3);
        let gr = Mat3::new(0.1, 0.2, -0.3, 0.5, -0.1, 0.7, 0.2, 0.0, -0.4);
        let gs = Vec3::new(0.6, -0.8, 0.0);
        let go = 0.9;
        let loss = |s: &Surfel2D| {
            let g = surfel_to_global(s, 0, &f, &p, 0);
            g.mu.dot(&gm) + g.rotation.component_mul(&gr).sum() + g.scale.dot(&gs) + go * g.opacity
        };
        let lg = global_backward(
            &s.mu_l,
            &s.rot_l,
            &Vec3::new(s.s_l.x, s.s_l.y, 0.0),
            s.opacity_raw,
            &f,
            &GlobalGrad { mu: gm, rotation: gr, scale: gs, opacity: go },
        );
        let h = 1e-6;
        let fd = |mut bump: Box<dyn FnMut(&mut Surfel2D, f64)>| {
            let mut a = s.clone();
            let mut b = s.clone();
            bump(&mut a, h);
            bump(&mut b, -h);
            (loss(&a) - loss(&b)) / (2.0 * h)
        };
        for i in 0..3 {
            let d = fd(Box::new(move |s, e| s.mu_l[i] += e));
            assert!((d - lg.mu_l[i]).abs() < 1e-8);
        }
        for i in 0..4 {
            let d = fd(Box::new(move |s, e| s.rot_l[i] += e));
            assert!((d - lg.rot_l[i]).abs() < 1e-8);
        }
        for i in 0..2 {
            let d = fd(Box::new(move |s, e| s.s_l[i] += e));
            assert!((d - lg.s_l[i]).abs() < 1e-8);
        }
        let d = fd(Box::new(|s, e| s.opacity_raw += e));
        assert!((d - lg.opacity_raw).abs() < 1e-8);
        assert_eq!(lg.offset, gm);
    }
}
