//! Per-view projection of world-space primitives and their per-pixel evaluation.
//!
//! Surfels are evaluated by exact ray-splat intersection through the 3x3
//! homography `M = K [R|t] H` that maps splat coordinates `(u, v, 1)` to
//! homogeneous pixels, combined with a screen-space low-pass Gaussian.
//! Children use the local affine (EWA) approximation of the perspective
//! projection at their mean.

use nalgebra::{Matrix2, Matrix2x3, Vector2};

use crate::camera::Camera;
use crate::math::{Mat3, Vec3};
use crate::rig::{GlobalGaussian, GlobalGrad, PrimitiveKind};
use crate::sh;

/// Standard deviation (pixels) of the surfel low-pass filter.
pub const LOWPASS_SIGMA: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// Diagonal dilation (pixels^2) added to projected child covariances.
pub const COV_DILATION: f64 = 0.3;
/// Children whose undilated screen covariance has a largest eigenvalue below
/// this (pixels^2) are culled as having no extent.
pub const MIN_CHILD_EXTENT: f64 = 1e-10;
/// Smallest contribution `alpha * G` that is blended.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;

const LOWPASS_INV_VAR: f64 = 1.0 / (LOWPASS_SIGMA * LOWPASS_SIGMA);

/// Half-open pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelRect {
    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1 || self.y0 >= self.y1
    }

    /// Pixels whose centers `(i + 0.5, j + 0.5)` fall inside the closed box.
    fn from_bounds(xmin: f64, xmax: f64, ymin: f64, ymax: f64, w: u32, h: u32) -> Self {
        let clip = |v: f64, hi: u32| -> u32 {
            if v.is_nan() || v <= 0.0 {
                0
            } else if v >= hi as f64 {
                hi
            } else {
                v as u32
            }
        };
        Self {
            x0: clip((xmin - 0.5).ceil(), w),
            x1: clip((xmax - 0.5).floor() + 1.0, w),
            y0: clip((ymin - 0.5).ceil(), h),
            y1: clip((ymax - 0.5).floor() + 1.0, h),
        }
    }

    fn union(&self, o: &Self) -> Self {
        Self {
            x0: self.x0.min(o.x0),
            y0: self.y0.min(o.y0),
            x1: self.x1.max(o.x1),
            y1: self.y1.max(o.y1),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SplatGeometry {
    Surfel {
        /// Ray-splat homography; rows are the plane coefficients over `(u, v, 1)`.
        m: Mat3,
        /// Projected center in pixels.
        center: Vector2<f64>,
        /// Camera-space unit normal oriented toward the camera.
        normal: Vec3,
        /// Sign applied to the raw normal to orient it.
        normal_sign: f64,
    },
    Child {
        mean: Vector2<f64>,
        /// Screen covariance after dilation.
        cov: Matrix2<f64>,
        conic: Matrix2<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectedSplat {
    pub kind: PrimitiveKind,
    pub source: u32,
    /// Camera-space z of the primitive center.
    pub depth: f64,
    pub geometry: SplatGeometry,
    pub opacity: f64,
    pub color: Vec3,
    pub color_clamped: [bool; 3],
    /// Pixels where `opacity * G` can reach the blending cutoff.
    pub rect: PixelRect,
}

/// Largest `rho` (squared Mahalanobis distance) at which `opacity * exp(-rho/2)`
/// still reaches `alpha_min`.
fn rho_max(opacity: f64, alpha_min: f64) -> f64 {
    2.0 * (opacity / alpha_min).ln()
}

/// Projects every primitive; culled primitives are omitted. Culling is per
/// primitive, so a culled parent keeps its child and vice versa.
pub fn project_all(globals: &[GlobalGaussian], cam: &Camera, alpha_min: f64) -> Vec<ProjectedSplat> {
    globals
        .iter()
        .filter_map(|g| match g.kind {
            PrimitiveKind::Surfel => project_surfel(g, cam, alpha_min),
            PrimitiveKind::Child => project_child(g, cam, alpha_min),
        })
        .collect()
}

pub fn surfel_homography(g: &GlobalGaussian, cam: &Camera) -> Mat3 {
    let a = cam.k * cam.rotation();
    let tu = g.rotation.column(0).into_owned();
    let tv = g.rotation.column(1).into_owned();
    let pc = cam.to_camera(&g.mu);
    Mat3::from_columns(&[a * tu * g.scale.x, a * tv * g.scale.y, cam.k * pc])
}

pub fn project_surfel(g: &GlobalGaussian, cam: &Camera, alpha_min: f64) -> Option<ProjectedSplat> {
    let pc = cam.to_camera(&g.mu);
    if !(pc.z > cam.near && pc.z < cam.far) || !(g.opacity >= alpha_min) {
        return None;
    }
    let m = surfel_homography(g, cam);
    let center = Vector2::new(m[(0, 2)] / m[(2, 2)], m[(1, 2)] / m[(2, 2)]);
    let raw_normal = cam.rotation() * g.rotation.column(2).into_owned();
    let normal_sign = if raw_normal.dot(&pc) > 0.0 { -1.0 } else { 1.0 };

    let r2 = rho_max(g.opacity, alpha_min);
    let (w, h) = (cam.width, cam.height);
    // Bounding box of the projected disc u^2 + v^2 <= r2 from its dual conic.
    let q = Mat3::from_diagonal(&Vec3::new(r2, r2, -1.0));
    let c = m * q * m.transpose();
    let disc = if c[(2, 2)] < 0.0 {
        let span = |i: usize| {
            let b = c[(i, 2)];
            let d = (b * b - c[(i, i)] * c[(2, 2)]).max(0.0).sqrt();
            let r1 = (b + d) / c[(2, 2)];
            let r2 = (b - d) / c[(2, 2)];
            (r1.min(r2) - 1.0, r1.max(r2) + 1.0)
        };
        let (xa, xb) = span(0);
        let (ya, yb) = span(1);
        PixelRect::from_bounds(xa, xb, ya, yb, w, h)
    } else {
        PixelRect { x0: 0, y0: 0, x1: w, y1: h }
    };
    let lr = (r2 / LOWPASS_INV_VAR).sqrt() + 1.0;
    let low = PixelRect::from_bounds(center.x - lr, center.x + lr, center.y - lr, center.y + lr, w, h);
    let rect = if center.x.is_finite() && center.y.is_finite() {
        disc.union(&low)
    } else {
        disc
    };
    if rect.is_empty() {
        return None;
    }
    let (color, color_clamped) = sh::eval_color(&g.sh, &(g.mu - cam.center()));
    Some(ProjectedSplat {
        kind: PrimitiveKind::Surfel,
        source: g.source,
        depth: pc.z,
        geometry: SplatGeometry::Surfel {
            m,
            center,
            normal: raw_normal * normal_sign,
            normal_sign,
        },
        opacity: g.opacity,
        color,
        color_clamped,
        rect,
    })
}

/// Jacobian of the pixel projection at camera-space point `t`.
fn projection_jacobian(k: &Mat3, t: &Vec3) -> Matrix2x3<f64> {
    let (fx, s, fy) = (k[(0, 0)], k[(0, 1)], k[(1, 1)]);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        fx * iz,
        s * iz,
        -(fx * t.x + s * t.y) * iz2,
        0.0,
        fy * iz,
        -fy * t.y * iz2,
    )
}

/// Camera-space covariance of a child.
fn camera_covariance(g: &GlobalGaussian, cam: &Camera) -> Mat3 {
    let s2 = Mat3::from_diagonal(&g.scale.component_mul(&g.scale));
    let rc = cam.rotation() * g.rotation;
    rc * s2 * rc.transpose()
}

/// Screen covariance before dilation.
pub fn child_screen_covariance(g: &GlobalGaussian, cam: &Camera) -> Matrix2<f64> {
    let t = cam.to_camera(&g.mu);
    let j = projection_jacobian(&cam.k, &t);
    j * camera_covariance(g, cam) * j.transpose()
}

pub fn project_child(g: &GlobalGaussian, cam: &Camera, alpha_min: f64) -> Option<ProjectedSplat> {
    let t = cam.to_camera(&g.mu);
    if !(t.z > cam.near && t.z < cam.far) || !(g.opacity >= alpha_min) {
        return None;
    }
    let raw = child_screen_covariance(g, cam);
    if !(raw.symmetric_eigenvalues().max() >= MIN_CHILD_EXTENT) {
        return None;
    }
    let cov = raw + Matrix2::identity() * COV_DILATION;
    let conic = cov.try_inverse()?;
    let (mx, my) = cam.project(&t);
    let mean = Vector2::new(mx, my);
    let lmax = cov.symmetric_eigenvalues().max();
    let r = (rho_max(g.opacity, alpha_min) * lmax).sqrt() + 1.0;
    let rect = PixelRect::from_bounds(mx - r, mx + r, my - r, my + r, cam.width, cam.height);
    if rect.is_empty() {
        return None;
    }
    let (color, color_clamped) = sh::eval_color(&g.sh, &(g.mu - cam.center()));
    Some(ProjectedSplat {
        kind: PrimitiveKind::Child,
        source: g.source,
        depth: t.z,
        geometry: SplatGeometry::Child { mean, cov, conic },
        opacity: g.opacity,
        color,
        color_clamped,
        rect,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SurfelBranch {
    /// Ray-splat intersection at splat coordinates `(u, v)`; `p = k x l`.
    Object { u: f64, v: f64, k: Vec3, l: Vec3, p: Vec3 },
    /// Screen-space low-pass filter around the projected center.
    LowPass,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SurfelEval {
    pub g: f64,
    pub depth: f64,
    pub branch: SurfelBranch,
}

/// Evaluates a projected surfel at image point `(x, y)`.
///
/// Returns `None` when the pixel ray is parallel to the splat plane. Ties
/// between the two filter branches go to the object-space branch, whose
/// depth is the intersection depth; the low-pass branch reports the center depth.
pub fn evaluate_surfel(p: &ProjectedSplat, x: f64, y: f64) -> Option<SurfelEval> {
    let SplatGeometry::Surfel { m, center, .. } = &p.geometry else {
        return None;
    };
    let r0 = m.row(0).transpose();
    let r1 = m.row(1).transpose();
    let r2 = m.row(2).transpose();
    let k = r2 * x - r0;
    let l = r2 * y - r1;
    let pp = k.cross(&l);
    if pp.z == 0.0 {
        return None;
    }
    let u = pp.x / pp.z;
    let v = pp.y / pp.z;
    if !u.is_finite() || !v.is_finite() {
        return None;
    }
    let rho3d = u * u + v * v;
    let dx = x - center.x;
    let dy = y - center.y;
    let rho2d = LOWPASS_INV_VAR * (dx * dx + dy * dy);
    if rho3d <= rho2d {
        Some(SurfelEval {
            g: (-0.5 * rho3d).exp(),
            depth: m[(2, 0)] * u + m[(2, 1)] * v + m[(2, 2)],
            branch: SurfelBranch::Object { u, v, k, l, p: pp },
        })
    } else {
        Some(SurfelEval {
            g: (-0.5 * rho2d).exp(),
            depth: m[(2, 2)],
            branch: SurfelBranch::LowPass,
        })
    }
}

/// Value of a projected child at `(x, y)` together with the offset `x - mean`.
pub fn evaluate_child(p: &ProjectedSplat, x: f64, y: f64) -> Option<(f64, Vector2<f64>)> {
    let SplatGeometry::Child { mean, conic, .. } = &p.geometry else {
        return None;
    };
    let d = Vector2::new(x - mean.x, y - mean.y);
    let power = -0.5 * (d.transpose() * conic * d)[(0, 0)];
    Some((power.exp(), d))
}

/// Accumulates the gradient on `M` (and, for the low-pass branch, on the
/// projected center through `M`) from gradients on a surfel's value and depth
/// at one pixel.
pub fn surfel_pixel_backward(
    p: &ProjectedSplat,
    x: f64,
    y: f64,
    ev: &SurfelEval,
    d_g: f64,
    d_depth: f64,
    d_m: &mut Mat3,
) {
    let SplatGeometry::Surfel { m, center, .. } = &p.geometry else {
        return;
    };
    match ev.branch {
        SurfelBranch::Object { u, v, k, l, p: pp } => {
            let d_rho = -0.5 * ev.g * d_g;
            let d_u = d_rho * 2.0 * u + d_depth * m[(2, 0)];
            let d_v = d_rho * 2.0 * v + d_depth * m[(2, 1)];
            d_m[(2, 0)] += d_depth * u;
            d_m[(2, 1)] += d_depth * v;
            d_m[(2, 2)] += d_depth;
            let d_p = Vec3::new(d_u / pp.z, d_v / pp.z, -(d_u * u + d_v * v) / pp.z);
            let d_k = l.cross(&d_p);
            let d_l = d_p.cross(&k);
            for c in 0..3 {
                d_m[(2, c)] += x * d_k[c] + y * d_l[c];
                d_m[(0, c)] -= d_k[c];
                d_m[(1, c)] -= d_l[c];
            }
        }
        SurfelBranch::LowPass => {
            // G = exp(-0.5 * s * |x - c|^2) => dG/dc = G * s * (x - c)
            let s = LOWPASS_INV_VAR * ev.g * d_g;
            let d_cx = s * (x - center.x);
            let d_cy = s * (y - center.y);
            let m22 = m[(2, 2)];
            d_m[(0, 2)] += d_cx / m22;
            d_m[(1, 2)] += d_cy / m22;
            d_m[(2, 2)] -= (d_cx * center.x + d_cy * center.y) / m22;
            d_m[(2, 2)] += d_depth;
        }
    }
}

/// Per-pixel child backward: returns gradients on the conic and the mean.
pub fn child_pixel_backward(
    conic: &Matrix2<f64>,
    d: &Vector2<f64>,
    g: f64,
    d_g: f64,
) -> (Matrix2<f64>, Vector2<f64>) {
    let d_conic = d * d.transpose() * (-0.5 * g * d_g);
    let d_mean = conic * d * (g * d_g);
    (d_conic, d_mean)
}

/// Pulls accumulated per-view gradients of a surfel back to its global parameters.
/// Returns the global gradient and the SH gradient.
pub fn surfel_project_backward(
    g: &GlobalGaussian,
    cam: &Camera,
    normal_sign: f64,
    d_m: &Mat3,
    d_color: &Vec3,
    d_normal: &Vec3,
) -> (GlobalGrad, Vec<Vec3>) {
    let rc = cam.rotation();
    let a = cam.k * rc;
    let tu = g.rotation.column(0).into_owned();
    let tv = g.rotation.column(1).into_owned();
    let g0 = d_m.column(0).into_owned();
    let g1 = d_m.column(1).into_owned();
    let g2 = d_m.column(2).into_owned();
    let d_su = g0.dot(&(a * tu));
    let d_sv = g1.dot(&(a * tv));
    let d_tu = a.transpose() * g0 * g.scale.x;
    let d_tv = a.transpose() * g1 * g.scale.y;
    let d_tw = rc.transpose() * d_normal * normal_sign;
    let mut d_mu = rc.transpose() * (cam.k.transpose() * g2);
    let mut d_sh = vec![Vec3::zeros(); g.sh.len()];
    d_mu += sh::eval_color_backward(&g.sh, &(g.mu - cam.center()), d_color, &mut d_sh);
    (
        GlobalGrad {
            mu: d_mu,
            rotation: Mat3::from_columns(&[d_tu, d_tv, d_tw]),
            scale: Vec3::new(d_su, d_sv, 0.0),
            opacity: 0.0,
        },
        d_sh,
    )
}

/// Pulls accumulated per-view gradients of a child back to its global parameters.
pub fn child_project_backward(
    g: &GlobalGaussian,
    cam: &Camera,
    d_conic: &Matrix2<f64>,
    d_mean: &Vector2<f64>,
    d_depth: f64,
    d_color: &Vec3,
) -> (GlobalGrad, Vec<Vec3>) {
    let rc = cam.rotation();
    let k = &cam.k;
    let t = cam.to_camera(&g.mu);
    let j = projection_jacobian(k, &t);
    let sigma_c = camera_covariance(g, cam);
    let cov = j * sigma_c * j.transpose() + Matrix2::identity() * COV_DILATION;
    let conic = cov.try_inverse().unwrap_or_else(Matrix2::zeros);

    let d_cov = -(conic * d_conic * conic);
    let d_cov_sym = d_cov + d_cov.transpose();
    // cov = J S J^T  =>  dJ = (G + G^T) J S,  dS = J^T G J
    let d_j = d_cov_sym * j * sigma_c;
    let d_sigma_c = j.transpose() * d_cov * j;
    let d_sigma_w = rc.transpose() * d_sigma_c * rc;

    let s2 = g.scale.component_mul(&g.scale);
    let d_sym = d_sigma_w + d_sigma_w.transpose();
    let d_rot = d_sym * g.rotation * Mat3::from_diagonal(&s2);
    let rt_g_r = g.rotation.transpose() * d_sigma_w * g.rotation;
    let d_scale = Vec3::new(
        2.0 * g.scale.x * rt_g_r[(0, 0)],
        2.0 * g.scale.y * rt_g_r[(1, 1)],
        2.0 * g.scale.z * rt_g_r[(2, 2)],
    );

    let (fx, s, fy) = (k[(0, 0)], k[(0, 1)], k[(1, 1)]);
    let iz = 1.0 / t.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let num_x = fx * t.x + s * t.y;
    // Jacobian entries as functions of t
    let mut d_t = Vec3::zeros();
    d_t.z += d_j[(0, 0)] * (-fx * iz2) + d_j[(0, 1)] * (-s * iz2) + d_j[(1, 1)] * (-fy * iz2);
    d_t.x += d_j[(0, 2)] * (-fx * iz2);
    d_t.y += d_j[(0, 2)] * (-s * iz2);
    d_t.z += d_j[(0, 2)] * (2.0 * num_x * iz3);
    d_t.y += d_j[(1, 2)] * (-fy * iz2);
    d_t.z += d_j[(1, 2)] * (2.0 * fy * t.y * iz3);
    // mean = ((fx tx + s ty)/tz + cx, fy ty / tz + cy)
    d_t.x += d_mean.x * fx * iz;
    d_t.y += d_mean.x * s * iz + d_mean.y * fy * iz;
    d_t.z += -d_mean.x * num_x * iz2 - d_mean.y * fy * t.y * iz2;
    d_t.z += d_depth;

    let mut d_mu = rc.transpose() * d_t;
    let mut d_sh = vec![Vec3::zeros(); g.sh.len()];
    d_mu += sh::eval_color_backward(&g.sh, &(g.mu - cam.center()), d_color, &mut d_sh);
    (
        GlobalGrad {
            mu: d_mu,
            rotation: d_rot,
            scale: d_scale,
            opacity: 0.0,
        },
        d_sh,
    )
}
