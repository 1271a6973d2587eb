//! Adam over named parameter groups of a [`Scene`].
//!
//! Every group is a flat vector with a fixed stride per primitive, so
//! densification can remap moments row by row.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::backward::{GradBuffer, GradMask};
use crate::error::{Error, Result};
use crate::math::{quat_normalize, Vec3};
use crate::scene::{Scene, Vec2};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    SurfelPosition,
    SurfelRotation,
    SurfelScale,
    SurfelOpacity,
    SurfelSh,
    SurfelPerturb,
    /// Per-frame surfel residuals, frame-major.
    SurfelFramePerturb,
    ChildPosition,
    ChildRotation,
    ChildScale,
    ChildOpacity,
    ChildSh,
    ChildPerturb,
    ChildFramePerturb,
}

pub const ALL_GROUPS: [Group; 14] = [
    Group::SurfelPosition,
    Group::SurfelRotation,
    Group::SurfelScale,
    Group::SurfelOpacity,
    Group::SurfelSh,
    Group::SurfelPerturb,
    Group::SurfelFramePerturb,
    Group::ChildPosition,
    Group::ChildRotation,
    Group::ChildScale,
    Group::ChildOpacity,
    Group::ChildSh,
    Group::ChildPerturb,
    Group::ChildFramePerturb,
];

impl Group {
    pub fn is_child(self) -> bool {
        self >= Group::ChildPosition
    }

    /// Values per primitive (per primitive and frame for residual groups).
    pub fn stride(self, sh_coeffs: usize) -> usize {
        use Group::*;
        match self {
            SurfelPosition | ChildPosition | SurfelPerturb | ChildPerturb => 3,
            SurfelFramePerturb | ChildFramePerturb => 3,
            SurfelRotation | ChildRotation => 4,
            SurfelScale => 2,
            ChildScale => 3,
            SurfelOpacity | ChildOpacity => 1,
            SurfelSh | ChildSh => 3 * sh_coeffs,
        }
    }

    pub fn enabled(self, mask: GradMask) -> bool {
        use Group::*;
        match self {
            SurfelPosition | SurfelRotation | SurfelScale => mask.surfel_geometry,
            SurfelOpacity => mask.surfel_opacity,
            SurfelSh => mask.surfel_sh,
            SurfelPerturb | SurfelFramePerturb => mask.surfel_perturb,
            _ => mask.children,
        }
    }
}

/// Per-group learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    /// Multiplied by the scene extent.
    pub position: f64,
    /// Position rate at the last step of a stage, as a fraction of the initial rate.
    pub position_final_factor: f64,
    pub rotation: f64,
    pub scale: f64,
    pub opacity: f64,
    pub sh: f64,
    pub perturbation: f64,
    /// Final fraction of the surfel rotation, scale and opacity rates, reached
    /// on the same log-linear schedule as position. 1 keeps them constant.
    pub surfel_shape_final_factor: f64,
    /// Final fraction of the SH rate of surfels and children.
    pub sh_final_factor: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final_factor: 0.01,
            rotation: 1e-3,
            scale: 5e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
            perturbation: 1e-4,
            surfel_shape_final_factor: 1.0,
            sh_final_factor: 1.0,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.position,
            self.position_final_factor,
            self.rotation,
            self.scale,
            self.opacity,
            self.sh,
            self.perturbation,
            self.surfel_shape_final_factor,
            self.sh_final_factor,
        ];
        if all.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParameter("learning rates must be finite and non-negative".into()))
        }
    }

    /// Rate for `group`; decaying rates follow `factor^progress` where
    /// `progress` runs from 0 to 1 over each stage.
    pub fn rate(&self, group: Group, extent: f64, progress: f64) -> f64 {
        use Group::*;
        let p = progress.clamp(0.0, 1.0);
        let decay = |factor: f64| factor.max(1e-12).powf(p);
        let shape = decay(self.surfel_shape_final_factor);
        match group {
            SurfelPosition | ChildPosition => self.position * extent * decay(self.position_final_factor),
            SurfelRotation => self.rotation * shape,
            SurfelScale => self.scale * shape,
            SurfelOpacity => self.opacity * shape,
            ChildRotation => self.rotation,
            ChildScale => self.scale,
            ChildOpacity => self.opacity,
            SurfelSh | ChildSh => self.sh * decay(self.sh_final_factor),
            _ => self.perturbation,
        }
    }
}

/// Current values of one group.
pub fn gather(scene: &Scene, group: Group) -> Vec<f64> {
    use Group::*;
    let mut out = Vec::new();
    let v3 = |out: &mut Vec<f64>, v: &Vec3| out.extend(v.iter());
    match group {
        SurfelPosition => scene.surfels.iter().for_each(|s| v3(&mut out, &s.mu_l)),
        SurfelRotation => scene.surfels.iter().for_each(|s| out.extend(s.rot_l)),
        SurfelScale => scene.surfels.iter().for_each(|s| out.extend(s.s_l.iter())),
        SurfelOpacity => scene.surfels.iter().for_each(|s| out.push(s.opacity_raw)),
        SurfelSh => scene.surfels.iter().for_each(|s| s.sh.iter().for_each(|c| v3(&mut out, c))),
        SurfelPerturb => scene.perturb.p2d.iter().for_each(|p| v3(&mut out, p)),
        SurfelFramePerturb => scene.perturb.per_frame.values().for_each(|r| r.p2d.iter().for_each(|p| v3(&mut out, p))),
        ChildPosition => scene.children.iter().for_each(|c| v3(&mut out, &c.mu_l)),
        ChildRotation => scene.children.iter().for_each(|c| out.extend(c.rot_l)),
        ChildScale => scene.children.iter().for_each(|c| v3(&mut out, &c.s_l)),
        ChildOpacity => scene.children.iter().for_each(|c| out.push(c.opacity_raw)),
        ChildSh => scene.children.iter().for_each(|c| c.sh.iter().for_each(|v| v3(&mut out, v))),
        ChildPerturb => scene.perturb.p3d.iter().for_each(|p| v3(&mut out, p)),
        ChildFramePerturb => scene.perturb.per_frame.values().for_each(|r| r.p3d.iter().for_each(|p| v3(&mut out, p))),
    }
    out
}

/// Writes `values` (laid out as by [`gather`]) back into the scene.
/// Rotations are renormalized.
pub fn scatter(scene: &mut Scene, group: Group, values: &[f64]) -> Result<()> {
    use Group::*;
    let expected = gather(scene, group).len();
    if values.len() != expected {
        return Err(Error::DimensionMismatch(format!("{group:?}: {} vs {expected}", values.len())));
    }
    let c3 = |v: &[f64]| Vec3::new(v[0], v[1], v[2]);
    let q = |v: &[f64]| quat_normalize(&[v[0], v[1], v[2], v[3]]);
    let k = crate::sh::num_coeffs(scene.sh_degree);
    let sh = |block: &mut [Vec3], v: &[f64]| block.iter_mut().zip(v.chunks_exact(3)).for_each(|(c, w)| *c = c3(w));
    let rows = values.chunks_exact(group.stride(k).max(1));
    match group {
        SurfelPosition => scene.surfels.iter_mut().zip(rows).for_each(|(s, v)| s.mu_l = c3(v)),
        SurfelRotation => scene.surfels.iter_mut().zip(rows).for_each(|(s, v)| s.rot_l = q(v)),
        SurfelScale => scene.surfels.iter_mut().zip(rows).for_each(|(s, v)| s.s_l = Vec2::new(v[0], v[1])),
        SurfelOpacity => scene.surfels.iter_mut().zip(rows).for_each(|(s, v)| s.opacity_raw = v[0]),
        SurfelSh => scene.surfels.iter_mut().zip(rows).for_each(|(s, v)| sh(&mut s.sh, v)),
        SurfelPerturb => scene.perturb.p2d.iter_mut().zip(rows).for_each(|(p, v)| *p = c3(v)),
        SurfelFramePerturb => scene
            .perturb
            .per_frame
            .values_mut()
            .flat_map(|r| r.p2d.iter_mut())
            .zip(rows)
            .for_each(|(p, v)| *p = c3(v)),
        ChildPosition => scene.children.iter_mut().zip(rows).for_each(|(c, v)| c.mu_l = c3(v)),
        ChildRotation => scene.children.iter_mut().zip(rows).for_each(|(c, v)| c.rot_l = q(v)),
        ChildScale => scene.children.iter_mut().zip(rows).for_each(|(c, v)| c.s_l = c3(v)),
        ChildOpacity => scene.children.iter_mut().zip(rows).for_each(|(c, v)| c.opacity_raw = v[0]),
        ChildSh => scene.children.iter_mut().zip(rows).for_each(|(c, v)| sh(&mut c.sh, v)),
        ChildPerturb => scene.perturb.p3d.iter_mut().zip(rows).for_each(|(p, v)| *p = c3(v)),
        ChildFramePerturb => scene
            .perturb
            .per_frame
            .values_mut()
            .flat_map(|r| r.p3d.iter_mut())
            .zip(rows)
            .for_each(|(p, v)| *p = c3(v)),
    }
    Ok(())
}

/// Gradient of one group laid out as by [`gather`]. Residual groups receive
/// the offset gradient only in the rows of frame `t`.
pub fn gather_grad(scene: &Scene, g: &GradBuffer, group: Group, t: u32) -> Vec<f64> {
    use Group::*;
    let mut out = Vec::new();
    let v3 = |out: &mut Vec<f64>, v: &Vec3| out.extend(v.iter());
    match group {
        SurfelPosition => g.surfels.iter().for_each(|s| v3(&mut out, &s.mu_l)),
        SurfelRotation => g.surfels.iter().for_each(|s| out.extend(s.rot_l)),
        SurfelScale => g.surfels.iter().for_each(|s| out.extend(s.s_l.iter())),
        SurfelOpacity => g.surfels.iter().for_each(|s| out.push(s.opacity_raw)),
        SurfelSh => g.surfels.iter().for_each(|s| s.sh.iter().for_each(|c| v3(&mut out, c))),
        SurfelPerturb => g.surfels.iter().for_each(|s| v3(&mut out, &s.p2d)),
        ChildPosition => g.children.iter().for_each(|c| v3(&mut out, &c.mu_l)),
        ChildRotation => g.children.iter().for_each(|c| out.extend(c.rot_l)),
        ChildScale => g.children.iter().for_each(|c| v3(&mut out, &c.s_l)),
        ChildOpacity => g.children.iter().for_each(|c| out.push(c.opacity_raw)),
        ChildSh => g.children.iter().for_each(|c| c.sh.iter().for_each(|v| v3(&mut out, v))),
        ChildPerturb => g.children.iter().for_each(|c| v3(&mut out, &c.p3d)),
        SurfelFramePerturb => {
            for &f in scene.perturb.per_frame.keys() {
                for s in &g.surfels {
                    v3(&mut out, &if f == t { s.p2d } else { Vec3::zeros() });
                }
            }
        }
        ChildFramePerturb => {
            for &f in scene.perturb.per_frame.keys() {
                for c in &g.children {
                    v3(&mut out, &if f == t { c.p3d } else { Vec3::zeros() });
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub state: BTreeMap<Group, Moments>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            step: 0,
            state: BTreeMap::new(),
        }
    }
}

impl Adam {
    /// Advances the shared step counter; call once per training step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// One bias-corrected update of `params` in place.
    pub fn update(&mut self, group: Group, params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        if params.len() != grad.len() {
            return Err(Error::DimensionMismatch(format!("{group:?} gradient length")));
        }
        if self.step == 0 {
            return Err(Error::InvalidParameter("update before begin_step".into()));
        }
        let st = self.state.entry(group).or_default();
        if st.m.len() != params.len() {
            if !st.m.is_empty() {
                return Err(Error::DimensionMismatch(format!("{group:?} optimizer state")));
            }
            st.m = vec![0.0; params.len()];
            st.v = vec![0.0; params.len()];
        }
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grad[i];
            st.m[i] = self.beta1 * st.m[i] + (1.0 - self.beta1) * g;
            st.v[i] = self.beta2 * st.v[i] + (1.0 - self.beta2) * g * g;
            let mh = st.m[i] / bc1;
            let vh = st.v[i] / bc2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
        Ok(())
    }

    /// Rebuilds a group's moments after its rows were reordered: new row `i`
    /// takes old row `sources[i]`, or zeros for `None`. Residual groups hold
    /// one block of `old_rows` rows per frame.
    pub fn remap(&mut self, group: Group, stride: usize, old_rows: usize, sources: &[Option<usize>]) {
        let Some(st) = self.state.get_mut(&group) else {
            return;
        };
        let block = old_rows * stride;
        let blocks = if block == 0 { 0 } else { st.m.len() / block };
        let rebuild = |src: &[f64]| {
            let mut out = Vec::with_capacity(blocks * sources.len() * stride);
            for b in 0..blocks {
                for s in sources {
                    match s {
                        Some(j) => out.extend_from_slice(&src[b * block + j * stride..b * block + (j + 1) * stride]),
                        None => out.extend(std::iter::repeat_n(0.0, stride)),
                    }
                }
            }
            out
        };
        st.m = rebuild(&st.m);
        st.v = rebuild(&st.v);
    }

    pub fn all_finite(&self) -> bool {
        self.state.values().all(|s| s.m.iter().chain(&s.v).all(|x| x.is_finite()))
    }
}
