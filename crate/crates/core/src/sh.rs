//! Real spherical harmonics up to degree 3, using the sign convention of the
//! common Gaussian splatting rasterizers. Colors are `max(sum + 0.5, 0)`.

use crate::math::{normalize_backward, Vec3};

pub const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

pub const MAX_DEGREE: u8 = 3;

pub fn num_coeffs(degree: u8) -> usize {
    let d = degree as usize + 1;
    d * d
}

/// Basis values and their partials with respect to the (unit) direction.
fn basis_with_grad(dir: &Vec3, n: usize) -> ([f64; 16], [[f64; 3]; 16]) {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let mut b = [0.0; 16];
    let mut g = [[0.0; 3]; 16];
    b[0] = C0;
    if n > 1 {
        b[1] = -C1 * y;
        g[1] = [0.0, -C1, 0.0];
        b[2] = C1 * z;
        g[2] = [0.0, 0.0, C1];
        b[3] = -C1 * x;
        g[3] = [-C1, 0.0, 0.0];
    }
    if n > 4 {
        let (xx, yy, zz) = (x * x, y * y, z * z);
        b[4] = C2[0] * x * y;
        g[4] = [C2[0] * y, C2[0] * x, 0.0];
        b[5] = C2[1] * y * z;
        g[5] = [0.0, C2[1] * z, C2[1] * y];
        b[6] = C2[2] * (2.0 * zz - xx - yy);
        g[6] = [-2.0 * C2[2] * x, -2.0 * C2[2] * y, 4.0 * C2[2] * z];
        b[7] = C2[3] * x * z;
        g[7] = [C2[3] * z, 0.0, C2[3] * x];
        b[8] = C2[4] * (xx - yy);
        g[8] = [2.0 * C2[4] * x, -2.0 * C2[4] * y, 0.0];
        if n > 9 {
            b[9] = C3[0] * y * (3.0 * xx - yy);
            g[9] = [6.0 * C3[0] * x * y, C3[0] * (3.0 * xx - 3.0 * yy), 0.0];
            b[10] = C3[1] * x * y * z;
            g[10] = [C3[1] * y * z, C3[1] * x * z, C3[1] * x * y];
            b[11] = C3[2] * y * (4.0 * zz - xx - yy);
            g[11] = [
                -2.0 * C3[2] * x * y,
                C3[2] * (4.0 * zz - xx - 3.0 * yy),
                8.0 * C3[2] * y * z,
            ];
            b[12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy);
            g[12] = [
                -6.0 * C3[3] * x * z,
                -6.0 * C3[3] * y * z,
                C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
            ];
            b[13] = C3[4] * x * (4.0 * zz - xx - yy);
            g[13] = [
                C3[4] * (4.0 * zz - 3.0 * xx - yy),
                -2.0 * C3[4] * x * y,
                8.0 * C3[4] * x * z,
            ];
            b[14] = C3[5] * z * (xx - yy);
            g[14] = [2.0 * C3[5] * x * z, -2.0 * C3[5] * y * z, C3[5] * (xx - yy)];
            b[15] = C3[6] * x * (xx - 3.0 * yy);
            g[15] = [C3[6] * (3.0 * xx - 3.0 * yy), -6.0 * C3[6] * x * y, 0.0];
        }
    }
    (b, g)
}

/// View-dependent RGB of a coefficient block seen along `view` (need not be
/// unit length). Returns the color and a per-channel "clamped" mask.
pub fn eval_color(sh: &[Vec3], view: &Vec3) -> (Vec3, [bool; 3]) {
    let dir = view.normalize();
    let (b, _) = basis_with_grad(&dir, sh.len());
    let mut c = Vec3::repeat(0.5);
    for (k, coeff) in sh.iter().enumerate() {
        c += coeff * b[k];
    }
    let clamped = [c.x < 0.0, c.y < 0.0, c.z < 0.0];
    (c.map(|v| v.max(0.0)), clamped)
}

/// Backward of [`eval_color`]: accumulates coefficient gradients into
/// `d_sh` and returns the gradient with respect to the unnormalized view vector.
pub fn eval_color_backward(sh: &[Vec3], view: &Vec3, d_color: &Vec3, d_sh: &mut [Vec3]) -> Vec3 {
    let dir = view.normalize();
    let (b, bg) = basis_with_grad(&dir, sh.len());
    let mut raw = Vec3::repeat(0.5);
    for (k, coeff) in sh.iter().enumerate() {
        raw += coeff * b[k];
    }
    let mut g = *d_color;
    for ch in 0..3 {
        if raw[ch] < 0.0 {
            g[ch] = 0.0;
        }
    }
    let mut d_dir = Vec3::zeros();
    for (k, coeff) in sh.iter().enumerate() {
        d_sh[k] += g * b[k];
        let s = coeff.dot(&g);
        d_dir += Vec3::new(bg[k][0], bg[k][1], bg[k][2]) * s;
    }
    normalize_backward(view, &d_dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_block(n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|k| {
                let t = k as f64;
                Vec3::new(0.1 * (t * 1.3).sin(), 0.12 * (t * 0.7).cos(), 0.05 * (t + 0.3).sin())
            })
            .collect()
    }

    #[test]
    fn dc_only_is_view_independent() {
        let sh = vec![Vec3::new(0.3, -0.2, 0.0)];
        let (a, _) = eval_color(&sh, &Vec3::new(0.0, 0.0, 1.0));
        let (b, _) = eval_color(&sh, &Vec3::new(1.0, -3.0, 0.2));
        assert_eq!(a, b);
        assert!((a.x - (0.5 + 0.3 * C0)).abs() < 1e-15);
    }

    #[test]
    fn zero_coeffs_give_mid_gray() {
        let sh = vec![Vec3::zeros(); 4];
        let (c, _) = eval_color(&sh, &Vec3::new(0.2, 0.1, 1.0));
        assert_eq!(c, Vec3::repeat(0.5));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for degree in 0..=3u8 {
            let n = num_coeffs(degree);
            let sh = random_block(n);
            let view = Vec3::new(0.3, -0.8, 1.7);
            let w = Vec3::new(0.7, -0.4, 1.1);
            let f = |sh: &[Vec3], v: &Vec3| eval_color(sh, v).0.dot(&w);
            let mut d_sh = vec![Vec3::zeros(); n];
            let d_view = eval_color_backward(&sh, &view, &w, &mut d_sh);
            let h = 1e-6;
            for k in 0..n {
                for ch in 0..3 {
                    let mut p = sh.clone();
                    let mut m = sh.clone();
                    p[k][ch] += h;
                    m[k][ch] -= h;
                    let fd = (f(&p, &view) - f(&m, &view)) / (2.0 * h);
                    assert!((fd - d_sh[k][ch]).abs() < 1e-8);
                }
            }
            for i in 0..3 {
                let mut p = view;
                let mut m = view;
                p[i] += h;
                m[i] -= h;
                let fd = (f(&sh, &p) - f(&sh, &m)) / (2.0 * h);
                assert!((fd - d_view[i]).abs() < 1e-8, "deg {degree} axis {i}: {fd} vs {}", d_view[i]);
            }
        }
    }
}
