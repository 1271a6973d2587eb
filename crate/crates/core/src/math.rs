//! Small numeric helpers shared by the transform, projection and gradient code.
//!
//! Quaternions are stored raw as `[w, x, y, z]` and normalized on read.

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Quat = [f64; 4];

pub const IDENTITY_QUAT: Quat = [1.0, 0.0, 0.0, 0.0];

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn quat_norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

pub fn quat_normalize(q: &Quat) -> Quat {
    let n = quat_norm(q);
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// Rotation matrix of the normalized quaternion.
pub fn quat_to_mat(q: &Quat) -> Mat3 {
    let [w, x, y, z] = quat_normalize(q);
    Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the raw (unnormalized)
/// quaternion. The normalization Jacobian projects the result onto the
/// tangent space of the sphere through `q`.
pub fn quat_to_mat_backward(q: &Quat, g: &Mat3) -> Quat {
    let n = quat_norm(q);
    let [w, x, y, z] = [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
    let gw = 2.0 * (-z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)]
        + x * g[(2, 1)]);
    let gx = 2.0
        * (y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)]
            + z * g[(2, 0)]
            + w * g[(2, 1)]
            - 2.0 * x * g[(2, 2)]);
    let gy = 2.0
        * (-2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)]
            - w * g[(2, 0)]
            + z * g[(2, 1)]
            - 2.0 * y * g[(2, 2)]);
    let gz = 2.0
        * (-2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)]
            - 2.0 * z * g[(1, 1)]
            + y * g[(1, 2)]
            + x * g[(2, 0)]
            + y * g[(2, 1)]);
    let gn = [gw, gx, gy, gz];
    let qn = [w, x, y, z];
    let dot: f64 = (0..4).map(|i| gn[i] * qn[i]).sum();
    [
        (gn[0] - qn[0] * dot) / n,
        (gn[1] - qn[1] * dot) / n,
        (gn[2] - qn[2] * dot) / n,
        (gn[3] - qn[3] * dot) / n,
    ]
}

/// Unit quaternion of a proper rotation matrix (Shepperd's method).
pub fn mat_to_quat(m: &Mat3) -> Quat {
    let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
    let q = if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    };
    let q = quat_normalize(&q);
    if q[0] < 0.0 {
        [-q[0], -q[1], -q[2], -q[3]]
    } else {
        q
    }
}

/// Gradient of `normalize(v)` given the upstream gradient on the unit vector.
pub fn normalize_backward(v: &Vec3, g: &Vec3) -> Vec3 {
    let n = v.norm();
    let u = v / n;
    (g - u * u.dot(g)) / n
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_quat(q: Quat, g: &Mat3) -> Quat {
        let h = 1e-6;
        let mut out = [0.0; 4];
        for i in 0..4 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let lp = quat_to_mat(&qp).component_mul(g).sum();
            let lm = quat_to_mat(&qm).component_mul(g).sum();
            out[i] = (lp - lm) / (2.0 * h);
        }
        out
    }

    #[test]
    fn quat_backward_matches_finite_differences() {
        let q = [0.9, -0.3, 0.5, 0.2];
        let g = Mat3::new(0.3, -1.2, 0.7, 0.1, 0.4, -0.9, 1.1, 0.25, -0.6);
        let a = quat_to_mat_backward(&q, &g);
        let f = fd_quat(q, &g);
        for i in 0..4 {
            assert!((a[i] - f[i]).abs() < 1e-7, "{i}: {} vs {}", a[i], f[i]);
        }
    }

    #[test]
    fn quat_roundtrip_through_matrix() {
        let q = quat_normalize(&[0.2, 0.7, -0.4, 0.5]);
        let back = mat_to_quat(&quat_to_mat(&q));
        let sign = if back[0] * q[0] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..4 {
            assert!((back[i] * sign - q[i]).abs() < 1e-12);
        }
        let r = quat_to_mat(&q);
        assert!((r.transpose() * r - Mat3::identity()).norm() < 1e-12);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_logit_inverse() {
        for p in [0.01, 0.3, 0.5, 0.99] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-14);
        }
        assert_eq!(logit(0.5), 0.0);
    }

    #[test]
    fn normalize_backward_is_tangent() {
        let v = Vec3::new(0.3, -2.0, 1.0);
        let g = Vec3::new(1.0, 0.5, -0.2);
        let d = normalize_backward(&v, &g);
        assert!(d.dot(&v).abs() < 1e-14);
    }
}
