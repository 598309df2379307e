use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Timestamped poses with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    entries: Vec<(f64, Pose)>,
}

impl Trajectory {
    pub fn new(entries: Vec<(f64, Pose)>) -> Result<Self> {
        for w in entries.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::invalid(format!(
                    "timestamps not strictly increasing at {} -> {}",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(Trajectory { entries })
    }

    pub fn from_poses(poses: &[Pose], dt: f64) -> Self {
        Trajectory {
            entries: poses.iter().enumerate().map(|(i, p)| (i as f64 * dt, *p)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(f64, Pose)] {
        &self.entries
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn pose(&self, i: usize) -> Pose {
        self.entries[i].1
    }

    /// Keeps the entries whose index satisfies `keep`.
    pub fn select(&self, keep: impl Fn(usize) -> bool) -> Trajectory {
        Trajectory {
            entries: self.entries.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, e)| *e).collect(),
        }
    }

    /// Same timestamps, poses replaced.
    pub fn with_poses(&self, poses: Vec<Pose>) -> Result<Trajectory> {
        if poses.len() != self.len() {
            return Err(Error::invalid("pose count mismatch"));
        }
        Ok(Trajectory {
            entries: self.entries.iter().zip(poses).map(|(e, p)| (e.0, p)).collect(),
        })
    }

    /// Re-expresses every pose relative to the first, so the first becomes identity.
    pub fn anchored_to_first(&self) -> Trajectory {
        let Some(first) = self.entries.first() else {
            return self.clone();
        };
        let inv = first.1.inverse();
        Trajectory {
            entries: self.entries.iter().map(|(t, p)| (*t, p.compose(&inv))).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn rejects_non_increasing() {
        let p = Pose::identity();
        assert!(Trajectory::new(vec![(0.0, p), (0.0, p)]).is_err());
        assert!(Trajectory::new(vec![(1.0, p), (0.5, p)]).is_err());
        assert!(Trajectory::new(vec![(0.0, p), (0.1, p)]).is_ok());
    }

    #[test]
    fn anchoring_makes_first_identity() {
        let a = crate::geometry::se3_exp(&Vector3::new(0.1, 0.2, 0.3), &Vector3::new(1.0, 0.0, 0.0));
        let b = crate::geometry::se3_exp(&Vector3::new(-0.1, 0.0, 0.3), &Vector3::new(0.0, 1.0, 0.0));
        let t = Trajectory::from_poses(&[a, b], 1.0).anchored_to_first();
        assert!((t.pose(0).to_matrix() - nalgebra::Matrix4::identity()).norm() < 1e-12);
        // relative motion preserved
        let rel = b.compose(&a.inverse());
        assert!((t.pose(1).to_matrix() - rel.to_matrix()).norm() < 1e-12);
    }
}
