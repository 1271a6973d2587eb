//! Procedural test scenes with analytically ray-cast ground truth.

use std::collections::HashMap;

use crate::camera::Camera;
use crate::raster::{render, RasterConfig, RenderMode};
use crate::train::{DensifyConfig, SelectionConfig, TrainConfig};
use crate::dataset::{Dataset, View};
use crate::error::Result;
use crate::image::Image;
use crate::math::{logit, Vec3};
use crate::scene::{RiggedMesh, Scene, Vec2};

/// The square `[-h, h]^2` in the plane z = 0 as two triangles.
pub fn quad_mesh(h: f64) -> RiggedMesh {
    RiggedMesh::new_static(
        vec![
            Vec3::new(-h, -h, 0.0),
            Vec3::new(h, -h, 0.0),
            Vec3::new(h, h, 0.0),
            Vec3::new(-h, h, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
}

/// The square `[-h, h]^2` split into `n x n` cells of two triangles each.
pub fn grid_quad_mesh(h: f64, n: u32) -> RiggedMesh {
    let n = n.max(1);
    let mut verts = Vec::new();
    for j in 0..=n {
        for i in 0..=n {
            let t = |k: u32| -h + 2.0 * h * k as f64 / n as f64;
            verts.push(Vec3::new(t(i), t(j), 0.0));
        }
    }
    let id = |i: u32, j: u32| j * (n + 1) + i;
    let mut tris = Vec::new();
    for j in 0..n {
        for i in 0..n {
            tris.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            tris.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    RiggedMesh::new_static(verts, tris)
}

/// Smooth color pattern over the quad.
pub fn quad_texture(x: f64, y: f64) -> Vec3 {
    use std::f64::consts::PI;
    Vec3::new(
        0.5 + 0.3 * (PI * (0.9 * x + 0.2)).sin() * (PI * 0.6 * y).cos(),
        0.5 + 0.3 * (PI * (0.7 * y - 0.1)).cos(),
        0.45 + 0.25 * (PI * 0.8 * (x + y)).sin(),
    )
}

/// Supersampled ray cast against the plane z = 0. `shade` receives the hit
/// point and the unit ray direction and returns `None` off the surface.
pub fn raycast_plane(cam: &Camera, samples: u32, background: Vec3, shade: impl Fn(&Vec3, &Vec3) -> Option<Vec3>) -> Image {
    let mut img = Image::new(cam.width, cam.height, 3);
    let o = cam.center();
    let rt = cam.rotation().transpose();
    let n = samples.max(1);
    for y in 0..cam.height {
        for x in 0..cam.width {
            let mut acc = Vec3::zeros();
            for sy in 0..n {
                for sx in 0..n {
                    let px = x as f64 + (sx as f64 + 0.5) / n as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / n as f64;
                    let d = (rt * cam.unproject_dir(px, py)).normalize();
                    let c = if d.z.abs() > 1e-12 && -o.z / d.z > 0.0 {
                        let hit = o + d * (-o.z / d.z);
                        shade(&hit, &d).unwrap_or(background)
                    } else {
                        background
                    };
                    acc += c;
                }
            }
            let c = acc / (n * n) as f64;
            let i = img.index(x, y);
            img.data[i..i + 3].copy_from_slice(c.as_slice());
        }
    }
    img
}

/// Cameras on a cone around +z looking at the origin.
pub fn ring_cameras(count: usize, distance: f64, tilt: f64, phase: f64, focal: f64, size: u32) -> Vec<Camera> {
    (0..count)
        .map(|i| {
            let a = phase + std::f64::consts::TAU * i as f64 / count as f64;
            let eye = Vec3::new(tilt.sin() * a.cos(), tilt.sin() * a.sin(), tilt.cos()) * distance;
            Camera::look_at(eye, Vec3::zeros(), Vec3::y(), focal, size, size)
        })
        .collect()
}

/// Textured quad filling the view of `views` training cameras.
pub fn textured_quad(size: u32, views: usize) -> Dataset {
    let mesh = quad_mesh(1.0);
    let focal = size as f64 * 1.25;
    let shade = |p: &Vec3, _: &Vec3| (p.x.abs() <= 1.0 && p.y.abs() <= 1.0).then(|| quad_texture(p.x, p.y));
    let make = |cams: Vec<Camera>| {
        cams.into_iter()
            .map(|camera| View {
                frame: 0,
                image: raycast_plane(&camera, 4, Vec3::zeros(), shade),
                camera,
            })
            .collect()
    };
    Dataset {
        mesh,
        train: make(ring_cameras(views, 1.6, 0.25, 0.0, focal, size)),
        test: make(ring_cameras(2, 1.6, 0.15, 0.5, focal, size)),
        background: Vec3::zeros(),
    }
}

/// Training settings for the small quad scenes. Starting from one surfel
/// per triangle, density control has to run often to reach a useful count
/// within a few thousand steps; it starts after step 250.
pub fn quad_config() -> TrainConfig {
    TrainConfig {
        densify: DensifyConfig {
            start: 250,
            interval: 25,
            max_surfels: 3000,
            ..Default::default()
        },
        ..Default::default()
    }
}

/// Square region of the quad holding the fine, view-dependent pattern.
pub const PATCH: [f64; 4] = [-0.2, -0.2, 0.25, 0.25];

pub fn in_patch(x: f64, y: f64) -> bool {
    x >= PATCH[0] && y >= PATCH[1] && x <= PATCH[2] && y <= PATCH[3]
}

/// Quad texture plus a patch of fine stripes whose tint follows the
/// viewing direction.
pub fn patch_shade(p: &Vec3, d: &Vec3) -> Option<Vec3> {
    if p.x.abs() > 1.0 || p.y.abs() > 1.0 {
        return None;
    }
    let base = quad_texture(p.x, p.y);
    if !in_patch(p.x, p.y) {
        return Some(base);
    }
    let stripes = (40.0 * (p.x + 0.5 * p.y)).sin();
    let tint = Vec3::new(0.5 + 0.5 * (6.0 * d.x).sin(), 0.5 + 0.5 * (6.0 * d.y).cos(), 0.5);
    Some((base * 0.5 + tint * 0.3 + Vec3::repeat(0.15 * stripes)).map(|c| c.clamp(0.0, 1.0)))
}

/// Quad with the view-dependent patch, seen from two rings of training
/// cameras and interleaved test cameras.
pub fn view_dependent_quad(size: u32) -> Dataset {
    let mesh = grid_quad_mesh(1.0, 8);
    let focal = size as f64 * 1.25;
    let make = |cams: Vec<Camera>| {
        cams.into_iter()
            .map(|camera| View {
                frame: 0,
                image: raycast_plane(&camera, 4, Vec3::zeros(), patch_shade),
                camera,
            })
            .collect()
    };
    let mut train = ring_cameras(8, 1.6, 0.3, 0.0, focal, size);
    train.extend(ring_cameras(4, 1.6, 0.12, 0.4, focal, size));
    let test = ring_cameras(4, 1.6, 0.22, 0.3, focal, size);
    Dataset {
        mesh,
        train: make(train),
        test: make(test),
        background: Vec3::zeros(),
    }
}

/// [`quad_config`] with a longer first stage for [`view_dependent_quad`].
/// With 16 tiles per 64 px view, `k = 4` keeps selection local.
pub fn patch_config() -> TrainConfig {
    let mut c = quad_config();
    c.stage1_steps = 3000;
    c.densify.stop_fraction = 0.5;
    c.lr.surfel_shape_final_factor = 0.01;
    c.selection = SelectionConfig { n: 16, k: 4 };
    c
}

/// Icosphere of the given subdivision level.
pub fn icosphere(level: u32, radius: f64, center: Vec3) -> RiggedMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::from(*v).normalize())
    .collect();
    let mut tris: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..level {
        let mut mid: HashMap<(u32, u32), u32> = HashMap::new();
        let mut midpoint = |a: u32, b: u32, verts: &mut Vec<Vec3>| {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a as usize] + verts[b as usize]) * 0.5).normalize());
                verts.len() as u32 - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for [a, b, c] in tris {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    RiggedMesh::new_static(verts.into_iter().map(|v| center + v * radius).collect(), tris)
}

/// One opaque surfel per triangle, wide enough that neighbors overlap.
pub fn surfel_sphere_scene(mesh: &RiggedMesh) -> Result<Scene> {
    let mut scene = Scene::from_mesh(mesh, 0)?;
    for s in &mut scene.surfels {
        s.s_l = Vec2::repeat(0.45f64.ln());
        s.opacity_raw = logit(0.95);
    }
    Ok(scene)
}

/// Cameras on the cube-corner directions around `center`.
pub fn corner_cameras(center: Vec3, distance: f64, focal: f64, size: u32) -> Vec<Camera> {
    let mut out = Vec::new();
    for sx in [-1.0, 1.0] {
        for sy in [-1.0, 1.0] {
            for sz in [-1.0, 1.0] {
                let dir = Vec3::new(sx, sy, sz).normalize();
                out.push(Camera::look_at(center + dir * distance, center, Vec3::z(), focal, size, size));
            }
        }
    }
    out
}

/// Unit surfel sphere at the origin with ground truth rendered from the
/// scene itself: eight cube-corner training views and two test views.
pub fn surfel_sphere(size: u32) -> Result<(Dataset, Scene)> {
    let mesh = icosphere(2, 1.0, Vec3::zeros());
    let scene = surfel_sphere_scene(&mesh)?;
    let focal = size as f64 * 1.2;
    let raster = RasterConfig::default();
    let view = |camera: Camera| -> Result<View> {
        let out = render(&scene, &mesh, 0, &camera, RenderMode::Mixed, &raster)?;
        Ok(View {
            frame: 0,
            image: out.color.clamped(),
            camera,
        })
    };
    let train = corner_cameras(Vec3::zeros(), 3.0, focal, size).into_iter().map(view).collect::<Result<_>>()?;
    let test = ring_cameras(2, 3.0, 0.7, 0.3, focal, size).into_iter().map(view).collect::<Result<_>>()?;
    let ds = Dataset {
        mesh,
        train,
        test,
        background: Vec3::zeros(),
    };
    Ok((ds, scene))
}
