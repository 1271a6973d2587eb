//! Pinhole camera with a rigid world-to-camera transform.

use std::path::Path;

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{Mat3, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    /// Intrinsics in pixels, upper triangular with last row (0, 0, 1).
    pub k: Mat3,
    /// World-to-camera rigid transform.
    pub w: Matrix4<f64>,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    #[serde(rename = "K")]
    k: [f64; 9],
    #[serde(rename = "W")]
    w: [f64; 16],
    width: u32,
    height: u32,
    near: f64,
    far: f64,
}

impl Camera {
    /// Camera at `eye` looking at `target`; image x to the right, y down, z forward.
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        focal: f64,
        width: u32,
        height: u32,
    ) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let r = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let t = -(r * eye);
        Self::from_parts(
            Mat3::new(
                focal,
                0.0,
                width as f64 / 2.0,
                0.0,
                focal,
                height as f64 / 2.0,
                0.0,
                0.0,
                1.0,
            ),
            r,
            t,
            width,
            height,
            0.01,
            100.0,
        )
    }

    pub fn from_parts(
        k: Mat3,
        rotation: Mat3,
        translation: Vec3,
        width: u32,
        height: u32,
        near: f64,
        far: f64,
    ) -> Self {
        let mut w = Matrix4::identity();
        w.fixed_view_mut::<3, 3>(0, 0).copy_from(&rotation);
        w.fixed_view_mut::<3, 1>(0, 3).copy_from(&translation);
        Self {
            k,
            w,
            width,
            height,
            near,
            far,
        }
    }

    pub fn rotation(&self) -> Mat3 {
        self.w.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vec3 {
        self.w.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Camera center in world space.
    pub fn center(&self) -> Vec3 {
        -(self.rotation().transpose() * self.translation())
    }

    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }

    /// Pixel coordinates of a camera-space point.
    pub fn project(&self, pc: &Vec3) -> (f64, f64) {
        let q = self.k * pc;
        (q.x / q.z, q.y / q.z)
    }

    /// Camera-space ray direction (z = 1) through image point `(x, y)`.
    pub fn unproject_dir(&self, x: f64, y: f64) -> Vec3 {
        let fx = self.k[(0, 0)];
        let s = self.k[(0, 1)];
        let fy = self.k[(1, 1)];
        let cx = self.k[(0, 2)];
        let cy = self.k[(1, 2)];
        let yc = (y - cy) / fy;
        let xc = (x - cx - s * yc) / fx;
        Vec3::new(xc, yc, 1.0)
    }

    pub fn num_pixels(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.k;
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::InvalidParameter("camera focal lengths must be positive".into()));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::InvalidParameter(
                "intrinsics must be upper triangular with K[2][2] = 1".into(),
            ));
        }
        let r = self.rotation();
        if (r.transpose() * r - Mat3::identity()).norm() > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidParameter("camera transform is not rigid".into()));
        }
        let bottom = self.w.fixed_view::<1, 4>(3, 0);
        if bottom[0] != 0.0 || bottom[1] != 0.0 || bottom[2] != 0.0 || bottom[3] != 1.0 {
            return Err(Error::InvalidParameter("camera transform bottom row".into()));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::InvalidParameter("need 0 < near < far".into()));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("empty image".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut k = [0.0; 9];
        let mut w = [0.0; 16];
        for r in 0..3 {
            for c in 0..3 {
                k[r * 3 + c] = self.k[(r, c)];
            }
        }
        for r in 0..4 {
            for c in 0..4 {
                w[r * 4 + c] = self.w[(r, c)];
            }
        }
        serde_json::to_string_pretty(&CameraFile {
            k,
            w,
            width: self.width,
            height: self.height,
            near: self.near,
            far: self.far,
        })
        .expect("camera serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: CameraFile = serde_json::from_str(text)?;
        let cam = Self {
            k: Mat3::from_row_slice(&f.k),
            w: Matrix4::from_row_slice(&f.w),
            width: f.width,
            height: f.height,
            near: f.near,
            far: f.far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_projects_target_to_principal_point() {
        let cam = Camera::look_at(Vec3::new(1.0, 2.0, -3.0), Vec3::new(0.2, 0.1, 0.5), Vec3::y(), 80.0, 64, 48);
        cam.validate().unwrap();
        let pc = cam.to_camera(&Vec3::new(0.2, 0.1, 0.5));
        let (x, y) = cam.project(&pc);
        assert!((x - 32.0).abs() < 1e-9 && (y - 24.0).abs() < 1e-9);
        assert!((cam.center() - Vec3::new(1.0, 2.0, -3.0)).norm() < 1e-12);
    }

    #[test]
    fn json_roundtrip() {
        let cam = Camera::look_at(Vec3::new(0.0, 0.0, -2.0), Vec3::zeros(), -Vec3::y(), 50.0, 32, 32);
        let back = Camera::from_json(&cam.to_json()).unwrap();
        assert!((back.w - cam.w).norm() < 1e-15);
        assert_eq!(back.k, cam.k);
    }

    #[test]
    fn unproject_inverts_project() {
        let mut cam = Camera::look_at(Vec3::new(0.0, 0.0, -2.0), Vec3::zeros(), -Vec3::y(), 50.0, 32, 32);
        cam.k[(0, 1)] = 0.7;
        let pc = Vec3::new(0.3, -0.2, 2.5);
        let (x, y) = cam.project(&pc);
        let d = cam.unproject_dir(x, y);
        assert!((d * pc.z - pc).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_planes() {
        let mut cam = Camera::look_at(Vec3::new(0.0, 0.0, -2.0), Vec3::zeros(), -Vec3::y(), 50.0, 32, 32);
        cam.near = 5.0;
        cam.far = 1.0;
        assert!(cam.validate().is_err());
    }
}
