//! Image quality metrics: L2 (mean squared error), PSNR and SSIM.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::ssim::ssim;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_shape(b)?;
    if a.data.is_empty() {
        return Err(Error::InvalidParameter("empty image".into()));
    }
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// `10 log10(1 / mse)` for signals in [0, 1]; infinite for identical images.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ImageMetrics {
    pub l2: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn image_metrics(rendered: &Image, truth: &Image) -> Result<ImageMetrics> {
    let l2 = mse(rendered, truth)?;
    let (s, _) = ssim(rendered, truth, false)?;
    Ok(ImageMetrics {
        l2,
        psnr: psnr_from_mse(l2),
        ssim: s,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<(String, ImageMetrics)>,
    pub mean: ImageMetrics,
}

impl MetricsTable {
    /// Tab-separated table with a trailing mean row. LPIPS is not computed.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("name\tl2\tpsnr\tssim\n");
        let line = |name: &str, m: &ImageMetrics| format!("{name}\t{:.8}\t{}\t{:.6}\n", m.l2, format_psnr(m.psnr), m.ssim);
        for (name, m) in &self.rows {
            s += &line(name, m);
        }
        s += &line("mean", &self.mean);
        s
    }
}

pub fn compute_metrics(pairs: &[(String, Image, Image)]) -> Result<MetricsTable> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no image pairs".into()));
    }
    let rows: Vec<(String, ImageMetrics)> = pairs
        .iter()
        .map(|(n, r, t)| Ok((n.clone(), image_metrics(r, t)?)))
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mean = ImageMetrics {
        l2: rows.iter().map(|r| r.1.l2).sum::<f64>() / n,
        psnr: rows.iter().map(|r| r.1.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.1.ssim).sum::<f64>() / n,
    };
    Ok(MetricsTable { rows, mean })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images() {
        let a = Image::filled(8, 8, 3, 0.4);
        let m = image_metrics(&a, &a).unwrap();
        assert_eq!(m.l2, 0.0);
        assert!(m.psnr.is_infinite());
        assert_eq!(format_psnr(m.psnr), "inf");
        assert!((m.ssim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn half_gray_vs_black() {
        let a = Image::filled(8, 8, 3, 0.5);
        let b = Image::new(8, 8, 3);
        assert_eq!(mse(&a, &b).unwrap(), 0.25);
        assert!((psnr(&a, &b).unwrap() - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn table_mean() {
        let a = Image::filled(4, 4, 1, 0.5);
        let b = Image::new(4, 4, 1);
        let t = compute_metrics(&[("x".into(), a.clone(), b), ("y".into(), a.clone(), a)]).unwrap();
        assert_eq!(t.mean.l2, 0.125);
        assert!(t.to_tsv().contains("inf"));
        assert!(compute_metrics(&[]).is_err());
    }
}
