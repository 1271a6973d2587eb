//! Training objectives and their gradients.

use serde::{Deserialize, Serialize};

use crate::backward::TraceGrad;
use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math::Vec3;
use crate::raster::Trace;
use crate::scene::{Scene, Vec2};
use crate::ssim::ssim;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// D-SSIM share of the RGB loss.
    pub lambda_dssim: f64,
    /// Position regularizer.
    pub lambda1: f64,
    /// Scale regularizer.
    pub lambda2: f64,
    /// Depth distortion.
    pub lambda3: f64,
    /// Normal consistency.
    pub lambda4: f64,
    /// Child displacement regularizer.
    pub lambda5: f64,
    pub eps_pos: f64,
    pub eps_sca: f64,
    pub eps_dis: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_dssim: 0.2,
            lambda1: 0.01,
            lambda2: 1.0,
            lambda3: 1000.0,
            lambda4: 0.05,
            lambda5: 0.01,
            eps_pos: 1.0,
            eps_sca: 0.6,
            eps_dis: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_dssim,
            self.lambda1,
            self.lambda2,
            self.lambda3,
            self.lambda4,
            self.lambda5,
            self.eps_pos,
            self.eps_sca,
            self.eps_dis,
        ];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) && self.lambda_dssim <= 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter("loss weights must be finite and non-negative".into()))
        }
    }
}

#[derive(Clone, Debug)]
pub struct RgbLoss {
    pub value: f64,
    pub l1: f64,
    pub dssim: f64,
    pub grad: Image,
}

/// `(1 - lambda) * L1 + lambda * (1 - SSIM) / 2`.
pub fn rgb_loss(rendered: &Image, truth: &Image, lambda: f64) -> Result<RgbLoss> {
    rendered.check_shape(truth)?;
    let n = rendered.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad = Image::new(rendered.width, rendered.height, rendered.channels);
    for (i, (a, b)) in rendered.data.iter().zip(&truth.data).enumerate() {
        let d = a - b;
        l1 += d.abs();
        grad.data[i] = (1.0 - lambda) * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 } / n;
    }
    l1 /= n;
    let (s, sg) = ssim(rendered, truth, lambda != 0.0)?;
    let dssim = (1.0 - s) / 2.0;
    if let Some(sg) = sg {
        for (g, v) in grad.data.iter_mut().zip(&sg.data) {
            *g -= lambda * 0.5 * v;
        }
    }
    Ok(RgbLoss {
        value: (1.0 - lambda) * l1 + lambda * dssim,
        l1,
        dssim,
        grad,
    })
}

/// Mean over rows of `|max(x, eps)|` and its gradient; components at or
/// below `eps` get zero gradient.
fn clamp_norm<const D: usize>(rows: &[[f64; D]], eps: f64) -> (f64, Vec<[f64; D]>) {
    if rows.is_empty() {
        return (0.0, Vec::new());
    }
    let n = rows.len() as f64;
    let mut total = 0.0;
    let grads = rows
        .iter()
        .map(|r| {
            let v: [f64; D] = std::array::from_fn(|i| r[i].max(eps));
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            total += norm;
            std::array::from_fn(|i| if r[i] > eps && norm > 0.0 { v[i] / norm / n } else { 0.0 })
        })
        .collect();
    (total / n, grads)
}

/// Position regularizer over surfel local positions.
pub fn pos_loss(scene: &Scene, eps: f64) -> (f64, Vec<Vec3>) {
    let rows: Vec<[f64; 3]> = scene.surfels.iter().map(|s| [s.mu_l.x, s.mu_l.y, s.mu_l.z]).collect();
    let (v, g) = clamp_norm(&rows, eps);
    (v, g.into_iter().map(|g| Vec3::from(g)).collect())
}

/// Scale regularizer over activated surfel scales; the gradient is with
/// respect to the raw log-scales.
pub fn sca_loss(scene: &Scene, eps: f64) -> (f64, Vec<Vec2>) {
    let rows: Vec<[f64; 2]> = scene
        .surfels
        .iter()
        .map(|s| {
            let a = s.scales();
            [a.x, a.y]
        })
        .collect();
    let (v, g) = clamp_norm(&rows, eps);
    (v, g.iter().zip(&rows).map(|(g, a)| Vec2::new(g[0] * a[0], g[1] * a[1])).collect())
}

/// Child displacement regularizer over `mu_l + p3d(t)`. The same gradient
/// applies to the child's `mu_l` and its perturbation.
pub fn dis_loss(scene: &Scene, t: u32, eps: f64) -> (f64, Vec<Vec3>) {
    let rows: Vec<[f64; 3]> = scene
        .children
        .iter()
        .enumerate()
        .map(|(j, c)| {
            let v = c.mu_l + scene.perturb.p3d_at(t, j);
            [v.x, v.y, v.z]
        })
        .collect();
    let (v, g) = clamp_norm(&rows, eps);
    (v, g.into_iter().map(|g| Vec3::from(g)).collect())
}

/// Mean over pixels of `sum_{i,j} w_i w_j |z_i - z_j|` over ordered pairs.
pub fn depth_distortion(trace: &Trace) -> (f64, Vec<TraceGrad>) {
    let np = trace.offsets.len().saturating_sub(1);
    let mut grads = vec![TraceGrad::default(); trace.terms.len()];
    if np == 0 {
        return (0.0, grads);
    }
    let inv = 1.0 / np as f64;
    let mut total = 0.0;
    for p in 0..np {
        let (a, b) = (trace.offsets[p] as usize, trace.offsets[p + 1] as usize);
        let terms = &trace.terms[a..b];
        for (i, ti) in terms.iter().enumerate() {
            let mut dw = 0.0;
            let mut dz = 0.0;
            for tj in terms {
                let d = ti.depth - tj.depth;
                total += ti.omega * tj.omega * d.abs();
                dw += tj.omega * d.abs();
                dz += ti.omega * tj.omega * d.signum() * (d != 0.0) as u8 as f64;
            }
            grads[a + i].omega = 2.0 * dw * inv;
            grads[a + i].depth = 2.0 * dz * inv;
        }
    }
    (total * inv, grads)
}

/// Camera-space normal field from a median-depth map by central differences.
/// Returns `(unnormalized cross product, normalized normal)` per valid pixel.
fn depth_normals(depth: &Image, cam: &Camera) -> Vec<Option<(Vec3, Vec3)>> {
    let (w, h) = (depth.width, depth.height);
    let point = |x: u32, y: u32| cam.unproject_dir(x as f64 + 0.5, y as f64 + 0.5) * depth.get(x, y, 0);
    let mut out = vec![None; depth.num_pixels()];
    if w < 3 || h < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let valid = [(x, y), (x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)]
                .iter()
                .all(|&(a, b)| depth.get(a, b, 0) > 0.0);
            if !valid {
                continue;
            }
            let dx = point(x + 1, y) - point(x - 1, y);
            let dy = point(x, y + 1) - point(x, y - 1);
            let c = dy.cross(&dx);
            let n = c.norm();
            if n > 0.0 {
                out[(y * w + x) as usize] = Some((c, c / n));
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct NormalLoss {
    pub value: f64,
    pub trace_grads: Vec<TraceGrad>,
    pub depth_grad: Image,
}

/// Mean over pixels of `sum_i w_i (1 - n_i . N)`, where `N` comes from the
/// median-depth map. Border pixels and pixels with an invalid neighbor are
/// skipped.
pub fn normal_consistency(trace: &Trace, median_depth: &Image, cam: &Camera) -> Result<NormalLoss> {
    let np = median_depth.num_pixels();
    if trace.offsets.len() != np + 1 {
        return Err(Error::DimensionMismatch("trace vs depth map".into()));
    }
    let inv = 1.0 / np as f64;
    let normals = depth_normals(median_depth, cam);
    let mut value = 0.0;
    let mut trace_grads = vec![TraceGrad::default(); trace.terms.len()];
    let mut depth_grad = Image::new(median_depth.width, median_depth.height, 1);
    let w = median_depth.width;
    for p in 0..np {
        let Some((c, nrm)) = normals[p] else { continue };
        let (a, b) = (trace.offsets[p] as usize, trace.offsets[p + 1] as usize);
        let mut d_n = Vec3::zeros();
        for (i, t) in trace.terms[a..b].iter().enumerate() {
            let dot = t.normal.dot(&nrm);
            value += t.omega * (1.0 - dot);
            trace_grads[a + i].omega = (1.0 - dot) * inv;
            trace_grads[a + i].normal = -nrm * t.omega * inv;
            d_n -= t.normal * t.omega * inv;
        }
        // N = c / |c|, c = dy x dx
        let cn = c.norm();
        let d_c = (d_n - nrm * nrm.dot(&d_n)) / cn;
        let (x, y) = ((p as u32) % w, (p as u32) / w);
        let dx = cam.unproject_dir(x as f64 + 1.5, y as f64 + 0.5) * median_depth.get(x + 1, y, 0)
            - cam.unproject_dir(x as f64 - 0.5, y as f64 + 0.5) * median_depth.get(x - 1, y, 0);
        let dy = cam.unproject_dir(x as f64 + 0.5, y as f64 + 1.5) * median_depth.get(x, y + 1, 0)
            - cam.unproject_dir(x as f64 + 0.5, y as f64 - 0.5) * median_depth.get(x, y - 1, 0);
        let d_dy = dx.cross(&d_c);
        let d_dx = d_c.cross(&dy);
        let mut add = |xx: u32, yy: u32, g: Vec3| {
            let dir = cam.unproject_dir(xx as f64 + 0.5, yy as f64 + 0.5);
            let i = (yy * w + xx) as usize;
            depth_grad.data[i] += g.dot(&dir);
        };
        add(x + 1, y, d_dx);
        add(x - 1, y, -d_dx);
        add(x, y + 1, d_dy);
        add(x, y - 1, -d_dy);
    }
    Ok(NormalLoss {
        value: value * inv,
        trace_grads,
        depth_grad,
    })
}

/// Per-term loss values of one training step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct LossTerms {
    pub rgb: f64,
    pub l1: f64,
    pub dssim: f64,
    pub pos: f64,
    pub sca: f64,
    pub depth: f64,
    pub normal: f64,
    pub dis: f64,
}

pub fn total_stage1(l: &LossTerms, w: &LossWeights) -> f64 {
    l.rgb + w.lambda1 * l.pos + w.lambda2 * l.sca + w.lambda3 * l.depth + w.lambda4 * l.normal
}

pub fn total_stage2(l: &LossTerms, w: &LossWeights) -> f64 {
    l.rgb + w.lambda5 * l.dis
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::IDENTITY_QUAT;
    use crate::raster::TraceTerm;
    use crate::scene::{Child3D, RiggedMesh};

    fn scene_with(n: usize) -> Scene {
        let mut v = Vec::new();
        let mut t = Vec::new();
        for i in 0..n {
            let x = i as f64 * 2.0;
            let b = v.len() as u32;
            v.extend([Vec3::new(x, 0.0, 0.0), Vec3::new(x + 1.0, 0.0, 0.0), Vec3::new(x, 1.0, 0.0)]);
            t.push([b, b + 1, b + 2]);
        }
        Scene::from_mesh(&RiggedMesh::new_static(v, t), 0).unwrap()
    }

    #[test]
    fn default_weights_are_the_published_constants() {
        let w = LossWeights::default();
        assert_eq!(
            (w.lambda_dssim, w.lambda1, w.lambda2, w.lambda3, w.lambda4, w.lambda5),
            (0.2, 0.01, 1.0, 1000.0, 0.05, 0.01)
        );
        assert_eq!((w.eps_pos, w.eps_sca, w.eps_dis), (1.0, 0.6, 1.0));
    }

    #[test]
    fn rgb_identical_is_zero() {
        let a = Image::filled(16, 16, 3, 0.4);
        let l = rgb_loss(&a, &a, 0.2).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn rgb_constant_offset_l1_share() {
        let a = Image::filled(16, 16, 3, 0.4);
        let b = Image::filled(16, 16, 3, 0.5);
        let l = rgb_loss(&a, &b, 0.2).unwrap();
        assert!((0.8 * l.l1 - 0.08).abs() < 1e-12);
        assert!((l.value - (0.08 + 0.2 * l.dssim)).abs() < 1e-12);
    }

    #[test]
    fn rgb_gradient_matches_finite_differences() {
        let mut a = Image::new(12, 12, 3);
        let mut b = Image::new(12, 12, 3);
        for i in 0..a.data.len() {
            a.data[i] = ((i * 37 % 101) as f64) / 101.0;
            b.data[i] = ((i * 53 % 97) as f64) / 97.0;
        }
        let l = rgb_loss(&a, &b, 0.2).unwrap();
        let h = 1e-7;
        for idx in [0, 50, 211, 431] {
            let mut p = a.clone();
            let mut m = a.clone();
            p.data[idx] += h;
            m.data[idx] -= h;
            let fd = (rgb_loss(&p, &b, 0.2).unwrap().value - rgb_loss(&m, &b, 0.2).unwrap().value) / (2.0 * h);
            assert!((fd - l.grad.data[idx]).abs() < 1e-7, "{fd} vs {}", l.grad.data[idx]);
        }
    }

    #[test]
    fn pos_loss_clamp_values() {
        let mut s = scene_with(1);
        let (v, g) = pos_loss(&s, 1.0);
        assert!((v - 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(g[0], Vec3::zeros());
        s.surfels[0].mu_l = Vec3::new(2.0, 0.0, 0.0);
        let (v, g) = pos_loss(&s, 1.0);
        assert!((v - 6f64.sqrt()).abs() < 1e-15);
        assert!(g[0].x > 0.0 && g[0].y == 0.0 && g[0].z == 0.0);
    }

    #[test]
    fn sca_loss_clamp_values() {
        let mut s = scene_with(1);
        s.surfels[0].s_l = Vec2::new(0.5f64.ln(), 0.5f64.ln());
        let (v, g) = sca_loss(&s, 0.6);
        assert!((v - 0.72f64.sqrt()).abs() < 1e-12);
        assert_eq!(g[0], Vec2::zeros());
        s.surfels[0].s_l = Vec2::new(2f64.ln(), 0.5f64.ln());
        let (v, _) = sca_loss(&s, 0.6);
        assert!((v - 4.36f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn clamp_gradients_match_finite_differences() {
        let mut s = scene_with(3);
        s.surfels[0].mu_l = Vec3::new(1.5, 0.2, 3.0);
        s.surfels[1].mu_l = Vec3::new(-2.0, 1.2, 0.9);
        s.surfels[2].s_l = Vec2::new(0.3, -1.0);
        s.surfels[1].s_l = Vec2::new(-0.2, 0.1);
        let (_, gp) = pos_loss(&s, 1.0);
        let (_, gs) = sca_loss(&s, 0.6);
        let h = 1e-6;
        for i in 0..3 {
            for c in 0..3 {
                let mut p = s.clone();
                let mut m = s.clone();
                p.surfels[i].mu_l[c] += h;
                m.surfels[i].mu_l[c] -= h;
                let fd = (pos_loss(&p, 1.0).0 - pos_loss(&m, 1.0).0) / (2.0 * h);
                assert!((fd - gp[i][c]).abs() < 1e-8);
            }
            for c in 0..2 {
                let mut p = s.clone();
                let mut m = s.clone();
                p.surfels[i].s_l[c] += h;
                m.surfels[i].s_l[c] -= h;
                let fd = (sca_loss(&p, 0.6).0 - sca_loss(&m, 0.6).0) / (2.0 * h);
                assert!((fd - gs[i][c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dis_loss_values_and_gradient() {
        let mut s = scene_with(2);
        s.spawn_children(&[0u32, 1].into_iter().collect()).unwrap();
        let (v, g) = dis_loss(&s, 0, 1.0);
        assert!((v - 3f64.sqrt()).abs() < 1e-15);
        assert!(g.iter().all(|g| *g == Vec3::zeros()));
        s.children[0] = Child3D {
            mu_l: Vec3::new(2.0, 0.0, 0.0),
            rot_l: IDENTITY_QUAT,
            ..s.children[0].clone()
        };
        s.perturb.p3d[0] = Vec3::new(1.0, 0.0, 0.0);
        let (v, g) = dis_loss(&s, 0, 1.0);
        assert!((v - (11f64.sqrt() + 3f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!((g[0].x - 3.0 / 11f64.sqrt() / 2.0).abs() < 1e-12);
    }

    fn trace_of(pixels: Vec<Vec<(f64, f64, Vec3)>>) -> Trace {
        let mut offsets = vec![0u32];
        let mut terms = Vec::new();
        for p in pixels {
            for (omega, depth, normal) in p {
                terms.push(TraceTerm {
                    splat: 0,
                    omega,
                    depth,
                    normal,
                });
            }
            offsets.push(terms.len() as u32);
        }
        Trace { offsets, terms }
    }

    #[test]
    fn depth_distortion_cases() {
        let n = -Vec3::z();
        assert_eq!(depth_distortion(&trace_of(vec![vec![(0.7, 2.0, n)]])).0, 0.0);
        let (v, _) = depth_distortion(&trace_of(vec![vec![(0.5, 1.0, n), (0.5, 2.0, n)]]));
        assert!((v - 0.5).abs() < 1e-15);
        assert_eq!(depth_distortion(&trace_of(vec![vec![(0.5, 1.5, n), (0.3, 1.5, n)]])).0, 0.0);
    }

    #[test]
    fn depth_distortion_gradient_and_permutation() {
        let n = -Vec3::z();
        let terms = vec![(0.3, 1.0, n), (0.2, 1.7, n), (0.25, 1.2, n)];
        let tr = trace_of(vec![terms.clone(), vec![(0.4, 3.0, n)]]);
        let (v, g) = depth_distortion(&tr);
        let mut rev = terms.clone();
        rev.reverse();
        assert!((depth_distortion(&trace_of(vec![rev, vec![(0.4, 3.0, n)]])).0 - v).abs() < 1e-15);
        let h = 1e-7;
        for i in 0..3 {
            let mut p = tr.clone();
            let mut m = tr.clone();
            p.terms[i].omega += h;
            m.terms[i].omega -= h;
            let fd = (depth_distortion(&p).0 - depth_distortion(&m).0) / (2.0 * h);
            assert!((fd - g[i].omega).abs() < 1e-8);
            let mut p = tr.clone();
            let mut m = tr.clone();
            p.terms[i].depth += h;
            m.terms[i].depth -= h;
            let fd = (depth_distortion(&p).0 - depth_distortion(&m).0) / (2.0 * h);
            assert!((fd - g[i].depth).abs() < 1e-8);
        }
    }

    fn plane_depth(cam: &Camera, n: Vec3, d: f64) -> Image {
        // plane n . p = d in camera space
        let mut img = Image::new(cam.width, cam.height, 1);
        for y in 0..cam.height {
            for x in 0..cam.width {
                let r = cam.unproject_dir(x as f64 + 0.5, y as f64 + 0.5);
                img.set(x, y, 0, d / n.dot(&r));
            }
        }
        img
    }

    fn uniform_trace(np: usize, omega: f64, normal: Vec3) -> Trace {
        trace_of((0..np).map(|_| vec![(omega, 1.0, normal)]).collect())
    }

    #[test]
    fn normal_consistency_on_planes() {
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), -Vec3::y(), 10.0, 8, 8);
        let depth = plane_depth(&cam, -Vec3::z(), -3.0);
        let l = normal_consistency(&uniform_trace(64, 1.0, -Vec3::z()), &depth, &cam).unwrap();
        assert!(l.value.abs() < 1e-12);

        let tilted = Vec3::new(0.3, -0.2, -1.0).normalize();
        let depth = plane_depth(&cam, tilted, -2.5);
        let l = normal_consistency(&uniform_trace(64, 1.0, tilted), &depth, &cam).unwrap();
        assert!(l.value.abs() < 1e-10);

        let l = normal_consistency(&uniform_trace(64, 1.0, Vec3::x()), &plane_depth(&cam, -Vec3::z(), -3.0), &cam).unwrap();
        // 36 interior pixels with value 1, averaged over 64
        assert!((l.value - 36.0 / 64.0).abs() < 1e-12);

        let flipped = normal_consistency(&uniform_trace(64, 1.0, Vec3::z()), &plane_depth(&cam, -Vec3::z(), -3.0), &cam).unwrap();
        assert!(flipped.value > 0.0);
    }

    #[test]
    fn normal_consistency_gradient() {
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), -Vec3::y(), 10.0, 6, 6);
        let mut depth = plane_depth(&cam, Vec3::new(0.2, -0.1, -1.0).normalize(), -2.8);
        for (i, v) in depth.data.iter_mut().enumerate() {
            *v += 0.05 * ((i * 13 % 7) as f64 / 7.0);
        }
        depth.data[0] = 0.0;
        let normals: Vec<Vec3> = (0..36).map(|i| Vec3::new(0.1 * (i % 3) as f64, -0.2, -1.0).normalize()).collect();
        let tr = trace_of((0..36).map(|i| vec![(0.6, 1.0, normals[i]), (0.2, 1.0, -Vec3::z())]).collect());
        let l = normal_consistency(&tr, &depth, &cam).unwrap();
        let h = 1e-7;
        for p in [7usize, 8, 14, 21, 28] {
            let mut dp = depth.clone();
            let mut dm = depth.clone();
            dp.data[p] += h;
            dm.data[p] -= h;
            let fd = (normal_consistency(&tr, &dp, &cam).unwrap().value - normal_consistency(&tr, &dm, &cam).unwrap().value) / (2.0 * h);
            assert!((fd - l.depth_grad.data[p]).abs() < 1e-7, "{p}: {fd} vs {}", l.depth_grad.data[p]);
        }
        for k in [14usize, 15, 30] {
            let mut tp = tr.clone();
            let mut tm = tr.clone();
            tp.terms[k].omega += h;
            tm.terms[k].omega -= h;
            let fd = (normal_consistency(&tp, &depth, &cam).unwrap().value - normal_consistency(&tm, &depth, &cam).unwrap().value) / (2.0 * h);
            assert!((fd - l.trace_grads[k].omega).abs() < 1e-8);
            for c in 0..3 {
                let mut tp = tr.clone();
                let mut tm = tr.clone();
                tp.terms[k].normal[c] += h;
                tm.terms[k].normal[c] -= h;
                let fd = (normal_consistency(&tp, &depth, &cam).unwrap().value - normal_consistency(&tm, &depth, &cam).unwrap().value) / (2.0 * h);
                assert!((fd - l.trace_grads[k].normal[c]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn stage_totals() {
        let w = LossWeights::default();
        let l = LossTerms {
            depth: 0.001,
            ..Default::default()
        };
        assert!((total_stage1(&l, &w) - 1.0).abs() < 1e-12);
        let l = LossTerms {
            rgb: 0.3,
            dis: 2.0,
            ..Default::default()
        };
        assert!((total_stage2(&l, &w) - 0.32).abs() < 1e-12);
        let zero = LossWeights {
            lambda1: 0.0,
            lambda2: 0.0,
            lambda3: 0.0,
            lambda4: 0.0,
            lambda5: 0.0,
            ..w
        };
        let l = LossTerms {
            rgb: 0.7,
            pos: 3.0,
            sca: 1.0,
            depth: 0.2,
            normal: 0.4,
            dis: 5.0,
            ..Default::default()
        };
        assert_eq!(total_stage1(&l, &zero), 0.7);
        assert_eq!(total_stage2(&l, &zero), 0.7);
    }
}
