//! SSIM with an 11x11 Gaussian window (sigma 1.5), zero padding and the
//! usual stabilizers, plus its analytic gradient with respect to the first image.

use crate::error::Result;
use crate::image::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let r = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "same" convolution of a single plane with zero padding. The
/// kernel is symmetric, so this operator is its own adjoint.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let r = WINDOW / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r as isize;
                if xx >= 0 && (xx as usize) < w {
                    s += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = s;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r as isize;
                if yy >= 0 && (yy as usize) < h {
                    s += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = s;
        }
    }
    out
}

/// Mean SSIM over pixels and channels, with the gradient with respect to `x`
/// when requested.
pub fn ssim(x: &Image, y: &Image, want_grad: bool) -> Result<(f64, Option<Image>)> {
    x.check_shape(y)?;
    let (w, h, ch) = (x.width as usize, x.height as usize, x.channels);
    let n = (w * h * ch) as f64;
    let k = kernel();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| Image::new(x.width, x.height, ch));
    for c in 0..ch {
        let px: Vec<f64> = x.data.iter().skip(c).step_by(ch).copied().collect();
        let py: Vec<f64> = y.data.iter().skip(c).step_by(ch).copied().collect();
        let m1 = blur(&px, w, h, &k);
        let m2 = blur(&py, w, h, &k);
        let e11 = blur(&px.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, &k);
        let e22 = blur(&py.iter().map(|v| v * v).collect::<Vec<_>>(), w, h, &k);
        let e12 = blur(&px.iter().zip(&py).map(|(a, b)| a * b).collect::<Vec<_>>(), w, h, &k);
        let mut d_m1 = vec![0.0; w * h];
        let mut d_e11 = vec![0.0; w * h];
        let mut d_e12 = vec![0.0; w * h];
        for i in 0..w * h {
            let (a, b) = (m1[i], m2[i]);
            let s11 = e11[i] - a * a;
            let s22 = e22[i] - b * b;
            let s12 = e12[i] - a * b;
            let n1 = 2.0 * a * b + C1;
            let n2 = 2.0 * s12 + C2;
            let d1 = a * a + b * b + C1;
            let d2 = s11 + s22 + C2;
            let s = n1 * n2 / (d1 * d2);
            total += s;
            if want_grad {
                d_m1[i] = (2.0 * b * (n2 - n1) / (d1 * d2) - 2.0 * a * s * (1.0 / d1 - 1.0 / d2)) / n;
                d_e11[i] = -s / d2 / n;
                d_e12[i] = 2.0 * n1 / (d1 * d2) / n;
            }
        }
        if let Some(g) = grad.as_mut() {
            let g_m1 = blur(&d_m1, w, h, &k);
            let g_e11 = blur(&d_e11, w, h, &k);
            let g_e12 = blur(&d_e12, w, h, &k);
            for i in 0..w * h {
                g.data[i * ch + c] = g_m1[i] + 2.0 * px[i] * g_e11[i] + py[i] * g_e12[i];
            }
        }
    }
    Ok((total / n, grad))
}
