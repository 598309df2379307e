//! Procedural room scenes, camera paths and clean rendered sequences.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::{Frame, FrameSequence, Intrinsics};
use crate::rng::RngStream;
use crate::splat::{render, Gaussian, GaussianMap};
use crate::trajectory::Trajectory;

/// Frame interval of generated sequences, seconds.
pub const FRAME_DT: f64 = 1.0 / 30.0;

/// Smooth color field: a few random plane waves per channel.
#[derive(Debug, Clone)]
struct ColorField {
    waves: Vec<[(Vector3<f64>, f64, f64); 6]>,
}

impl ColorField {
    fn new(rng: &mut impl Rng) -> Self {
        let waves = (0..3)
            .map(|_| {
                std::array::from_fn(|_| {
                    let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                        .normalize();
                    let freq = rng.random_range(2.0..9.0);
                    (dir * freq, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.05..0.12))
                })
            })
            .collect();
        ColorField { waves }
    }

    fn at(&self, x: &Vector3<f64>) -> [f64; 3] {
        std::array::from_fn(|c| {
            let v: f64 = self.waves[c].iter().map(|(w, phase, amp)| amp * (w.dot(x) + phase).sin()).sum();
            (0.5 + v).clamp(0.02, 0.98)
        })
    }
}

/// Gaussians on the floor and four side walls of a cube of side `extent`
/// centered at the origin. World `+y` points down, towards the floor; the
/// ceiling is left open.
pub fn make_room_scene(seed: u64, n_gaussians: usize, extent: f64) -> Result<GaussianMap> {
    if n_gaussians < 1 {
        return Err(Error::invalid("scene needs at least one gaussian"));
    }
    if !(extent > 0.0) {
        return Err(Error::invalid("scene extent must be positive"));
    }
    let mut rng = RngStream::new(seed, 0, 0x5CE7E).rng();
    let field = ColorField::new(&mut rng);
    let h = extent * 0.5;
    // jittered grid per wall, so that the walls render without holes
    let per_wall = n_gaussians.div_ceil(5);
    let grid = (per_wall as f64).sqrt().ceil() as usize;
    let cell = extent / grid as f64;
    let radius = 0.8 * cell;
    let gaussians = (0..n_gaussians)
        .map(|i| {
            let (wall, j) = (i % 5, i / 5);
            let a = -h + cell * ((j % grid) as f64 + 0.5 + rng.random_range(-0.3..0.3));
            let b = -h + cell * ((j / grid) as f64 + 0.5 + rng.random_range(-0.3..0.3));
            let p = match wall {
                0 => Vector3::new(a, h, b),
                1 => Vector3::new(-h, a, b),
                2 => Vector3::new(h, a, b),
                3 => Vector3::new(a, b, -h),
                _ => Vector3::new(a, b, h),
            };
            Gaussian { position: p.into(), radius, opacity: 0.95, color: field.at(&p) }
        })
        .collect();
    GaussianMap::new(gaussians)
}

/// World-to-camera pose of a camera at `eye` looking at `target`, with the
/// image `y` axis aligned to world `+y` as far as possible.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Pose {
    let forward = (target - eye).normalize();
    let mut down = Vector3::y() - forward * forward.y;
    if down.norm() < 1e-9 {
        down = Vector3::z() - forward * forward.z;
    }
    let down = down.normalize();
    let right = down.cross(&forward);
    let c2w = Matrix3::from_columns(&[right, down, forward]);
    Pose::from_rotation_matrix(&c2w, *eye).inverse()
}

/// Camera on a horizontal circle of `radius` around the origin, looking at
/// the center, at angle `theta` (radians).
pub fn orbit_pose(radius: f64, theta: f64) -> Pose {
    let eye = Vector3::new(radius * theta.sin(), 0.0, -radius * theta.cos());
    if radius == 0.0 {
        // at the center: look along the orbit direction instead
        let fwd = Vector3::new(theta.sin(), 0.0, theta.cos());
        return look_at(&eye, &fwd);
    }
    // "inward" from the orbit means looking through the center toward the far wall
    look_at(&eye, &Vector3::zeros())
}

/// `n_frames` poses with uniform angular steps over `angular_span` radians.
pub fn make_orbit_trajectory(n_frames: usize, radius: f64, angular_span: f64) -> Trajectory {
    make_varying_orbit(n_frames, radius, angular_span, 0.0, 0)
}

/// Orbit whose angular speed oscillates by the factor `1 + variation * cos`
/// over `cycles` periods, ending at the same angle as the uniform orbit.
/// Models stop-and-go camera motion.
pub fn make_varying_orbit(n_frames: usize, radius: f64, angular_span: f64, variation: f64, cycles: usize) -> Trajectory {
    let poses: Vec<Pose> = (0..n_frames)
        .map(|i| {
            let s = if n_frames > 1 { i as f64 / (n_frames - 1) as f64 } else { 0.0 };
            let wobble = if cycles > 0 {
                let w = std::f64::consts::TAU * cycles as f64;
                variation * (w * s).sin() / w
            } else {
                0.0
            };
            orbit_pose(radius, angular_span * (s + wobble))
        })
        .collect();
    Trajectory::from_poses(&poses, FRAME_DT)
}

/// One rendered frame per pose. Depth is coverage-normalized and VOID where
/// coverage is below one half.
pub fn render_sequence(map: &GaussianMap, traj: &Trajectory, k: &Intrinsics) -> FrameSequence {
    traj.entries()
        .iter()
        .map(|(ts, pose)| render_observation(map, pose, k, *ts))
        .collect()
}

/// One sensor frame seen from `pose`.
pub fn render_observation(map: &GaussianMap, pose: &Pose, k: &Intrinsics, timestamp: f64) -> Frame {
    render(map, pose, k).to_frame(k, timestamp, 0.5)
}

/// Parameters that regenerate a procedural scene; stored as `scene.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub n_gaussians: usize,
    pub extent: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec { seed: 0, n_gaussians: 20_000, extent: 3.0 }
    }
}

impl SceneSpec {
    pub fn build(&self) -> Result<GaussianMap> {
        make_room_scene(self.seed, self.n_gaussians, self.extent)
    }
}

/// Intrinsics used by generated desk-scale sequences.
pub fn default_intrinsics() -> Intrinsics {
    Intrinsics { fx: 60.0, fy: 60.0, cx: 39.5, cy: 29.5, width: 80, height: 60 }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_gaussian_scene() {
        assert_eq!(make_room_scene(1, 1, 3.0).unwrap().len(), 1);
        assert!(make_room_scene(1, 0, 3.0).is_err());
    }

    #[test]
    fn seeds_differ_and_repeat() {
        let a = make_room_scene(1, 50, 3.0).unwrap();
        assert_ne!(a, make_room_scene(2, 50, 3.0).unwrap());
        assert_eq!(a, make_room_scene(1, 50, 3.0).unwrap());
    }

    #[test]
    fn center_view_is_covered() {
        let map = make_room_scene(3, 20_000, 3.0).unwrap();
        let k = default_intrinsics();
        for theta in [0.0, 1.0, 2.5] {
            let out = render(&map, &orbit_pose(0.0, theta), &k);
            let covered = out.coverage.data().iter().filter(|c| **c > 0.9).count();
            assert!(covered as f64 > 0.9 * (k.width * k.height) as f64, "{theta}: {covered}");
        }
    }

    #[test]
    fn orbit_examples() {
        assert_eq!(make_orbit_trajectory(1, 0.5, 1.0).len(), 1);
        let still = make_orbit_trajectory(4, 0.5, 0.0);
        assert!(still.poses().windows(2).all(|w| w[0] == w[1]));
        let t = make_orbit_trajectory(7, 0.5, 1.2);
        for w in t.poses().windows(2) {
            assert!((w[0].rotation_distance(&w[1]) - 0.2).abs() < 1e-9);
        }
    }

    #[test]
    fn orbit_looks_at_center() {
        let p = orbit_pose(0.5, 0.7);
        let c = p.transform_point(&Vector3::zeros());
        assert!(c.x.abs() < 1e-12 && c.y.abs() < 1e-12 && (c.z - 0.5).abs() < 1e-12);
        let identity = orbit_pose(0.5, 0.0);
        assert!((identity.rotation() - Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn varying_orbit_keeps_endpoints() {
        let u = make_orbit_trajectory(11, 0.5, 1.0);
        let v = make_varying_orbit(11, 0.5, 1.0, 0.8, 3);
        assert!((u.pose(10).to_matrix() - v.pose(10).to_matrix()).norm() < 1e-12);
        assert_eq!(u.pose(0), v.pose(0));
    }

    #[test]
    fn rendering_is_pure() {
        let map = make_room_scene(4, 2000, 3.0).unwrap();
        let traj = make_orbit_trajectory(3, 0.5, 0.3);
        let k = default_intrinsics();
        let a = render_sequence(&map, &traj, &k);
        assert_eq!(a.len(), 3);
        assert_eq!(a, render_sequence(&map, &traj, &k));
        assert!(a.iter().all(|f| f.validate().is_ok()));
    }
}
