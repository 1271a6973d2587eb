//! Differentiable renderer and trainer for mesh-rigged mixtures of 2D surfels
//! and 3D Gaussians.

pub mod backward;
pub mod buffer;
pub mod camera;
pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod losses;
pub mod math;
pub mod mc_tables;
pub mod meshing;
pub mod metrics;
pub mod optim;
pub mod project;
pub mod raster;
pub mod rig;
pub mod scene;
pub mod selection;
pub mod sh;
pub mod ssim;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
