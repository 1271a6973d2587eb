//! Multi-view datasets: in-memory views and the on-disk JSON manifest.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::{load_rigged_mesh, read_png, save_frames, write_obj, write_png};
use crate::math::Vec3;
use crate::scene::RiggedMesh;
use crate::selection::ViewSampler;

#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub frame: u32,
    pub camera: Camera,
    pub image: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub mesh: RiggedMesh,
    pub train: Vec<View>,
    pub test: Vec<View>,
    pub background: Vec3,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        if self.train.is_empty() {
            return Err(Error::InvalidParameter("dataset has no training views".into()));
        }
        for v in self.train.iter().chain(&self.test) {
            self.mesh.frame(v.frame)?;
            v.camera.validate()?;
            if v.image.width != v.camera.width || v.image.height != v.camera.height || v.image.channels != 3 {
                return Err(Error::DimensionMismatch(format!("view of frame {} does not match its camera", v.frame)));
            }
        }
        Ok(())
    }

    /// `(frame, camera)` of every training view.
    pub fn train_cameras(&self) -> Vec<(u32, Camera)> {
        self.train.iter().map(|v| (v.frame, v.camera.clone())).collect()
    }
}

/// Uniform seeded choice of training views.
pub struct RandomViews<'a> {
    views: &'a [View],
    rng: ChaCha8Rng,
}

impl<'a> RandomViews<'a> {
    pub fn new(views: &'a [View], seed: u64) -> Self {
        Self {
            views,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl ViewSampler for RandomViews<'_> {
    fn len(&self) -> usize {
        self.views.len()
    }

    fn pick(&mut self, _iter: usize) -> usize {
        self.rng.random_range(0..self.views.len())
    }

    fn sample(&self, index: usize) -> (u32, &Camera, &Image) {
        let v = &self.views[index];
        (v.frame, &v.camera, &v.image)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub frame: u32,
    pub camera: PathBuf,
    pub image: PathBuf,
    pub split: Split,
}

/// Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub mesh: PathBuf,
    #[serde(default)]
    pub frames_dir: Option<PathBuf>,
    #[serde(default)]
    pub background: [f64; 3],
    pub views: Vec<ViewRecord>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.check_files(&root)?;
        Ok((m, root))
    }

    /// Fails with the first referenced path that does not exist.
    pub fn check_files(&self, root: &Path) -> Result<()> {
        let mut paths = vec![root.join(&self.mesh)];
        if let Some(f) = &self.frames_dir {
            paths.push(root.join(f));
        }
        for v in &self.views {
            paths.push(root.join(&v.camera));
            paths.push(root.join(&v.image));
        }
        match paths.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::MissingFile(p)),
            None => Ok(()),
        }
    }
}

pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let (m, root) = DatasetManifest::load(manifest_path)?;
    let frames = m.frames_dir.as_ref().map(|f| root.join(f));
    let mesh = load_rigged_mesh(&root.join(&m.mesh), frames.as_deref())?;
    let mut ds = Dataset {
        mesh,
        train: Vec::new(),
        test: Vec::new(),
        background: Vec3::from(m.background),
    };
    for r in &m.views {
        let view = View {
            frame: r.frame,
            camera: Camera::load(&root.join(&r.camera))?,
            image: read_png(&root.join(&r.image))?,
        };
        match r.split {
            Split::Train => ds.train.push(view),
            Split::Test => ds.test.push(view),
        }
    }
    ds.validate()?;
    Ok(ds)
}

/// Writes mesh, frames, cameras, PNG images and `manifest.json` under `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir.join("cameras"))?;
    std::fs::create_dir_all(dir.join("images"))?;
    write_obj(&dir.join("mesh.obj"), &ds.mesh.vertices_canonical, &ds.mesh.triangles)?;
    save_frames(&dir.join("frames"), &ds.mesh)?;
    let mut views = Vec::new();
    for (split, list) in [(Split::Train, &ds.train), (Split::Test, &ds.test)] {
        let tag = if split == Split::Train { "train" } else { "test" };
        for (i, v) in list.iter().enumerate() {
            let cam = PathBuf::from(format!("cameras/{tag}_{i:03}.json"));
            let img = PathBuf::from(format!("images/{tag}_{i:03}.png"));
            v.camera.save(&dir.join(&cam))?;
            write_png(&dir.join(&img), &v.image)?;
            views.push(ViewRecord {
                frame: v.frame,
                camera: cam,
                image: img,
                split: split.clone(),
            });
        }
    }
    let m = DatasetManifest {
        mesh: "mesh.obj".into(),
        frames_dir: Some("frames".into()),
        background: ds.background.into(),
        views,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_string_pretty(&m)?)?;
    Ok(path)
}
