//! Trajectory perturbations: per-pose deviations and faster motion.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Pose};
use crate::image::FrameSequence;
use crate::rng::RngStream;
use crate::trajectory::Trajectory;

/// Benchmark presets for the rotation deviation, degrees.
pub const ROTATION_PRESETS_DEG: [f64; 3] = [1.0, 3.0, 5.0];
/// Benchmark presets for the translation deviation, meters.
pub const TRANSLATION_PRESETS_M: [f64; 3] = [0.0125, 0.025, 0.05];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionDeviationSpec {
    /// Per-axis standard deviation of the rotation noise, degrees.
    pub sigma_rot: f64,
    /// Per-axis standard deviation of the translation noise, meters.
    pub sigma_trans: f64,
}

impl MotionDeviationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.sigma_rot >= 0.0 && self.sigma_trans >= 0.0 {
            Ok(())
        } else {
            Err(Error::invalid("motion deviation sigmas must be non-negative"))
        }
    }
}

/// The draws for one pose: rotation vector (radians) and translation offset.
pub fn deviation_draws(spec: &MotionDeviationSpec, rng: RngStream, index: usize) -> (Vector3<f64>, Vector3<f64>) {
    let mut r = rng.at_frame(index as u64).rng();
    let mut n = || -> f64 { r.sample(StandardNormal) };
    let s = spec.sigma_rot.to_radians();
    let omega = Vector3::new(n() * s, n() * s, n() * s);
    let dt = Vector3::new(n() * spec.sigma_trans, n() * spec.sigma_trans, n() * spec.sigma_trans);
    (omega, dt)
}

/// Applies `R' = R exp([omega]x)` and `c' = c + dt` to a camera-to-world
/// pose `(R, c)`, given the world-to-camera pose.
pub fn deviate_pose(pose: &Pose, omega: &Vector3<f64>, dt: &Vector3<f64>) -> Pose {
    let c2w = pose.inverse();
    let rot = c2w.unit_quaternion() * so3_exp(omega);
    Pose::from_unit_quaternion(&rot, c2w.translation() + dt).inverse()
}

pub fn deviate_trajectory(traj: &Trajectory, spec: &MotionDeviationSpec, rng: RngStream) -> Result<Trajectory> {
    spec.validate()?;
    if spec.sigma_rot == 0.0 && spec.sigma_trans == 0.0 {
        return Ok(traj.clone());
    }
    let poses = traj
        .poses()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (omega, dt) = deviation_draws(spec, rng, i);
            deviate_pose(p, &omega, &dt)
        })
        .collect();
    traj.with_poses(poses)
}

/// Keeps every `k`-th pose (and frame) starting at index 0.
pub fn speedup_trajectory(traj: &Trajectory, frames: &FrameSequence, k: usize) -> Result<(Trajectory, FrameSequence)> {
    if k < 1 {
        return Err(Error::invalid("speedup factor must be at least 1"));
    }
    if !frames.is_empty() && frames.len() != traj.len() {
        return Err(Error::invalid("frame and pose counts differ"));
    }
    let t = traj.select(|i| i % k == 0);
    let f = frames.iter().step_by(k).cloned().collect();
    Ok((t, f))
}
