//! Quaternion and SE(3) algebra.
//!
//! A [`Pose`] is stored world-to-camera: a world point `X` maps to camera
//! coordinates as `R * X + t`. Trajectory files use the camera-to-world
//! inverse; conversion happens in [`crate::io`].

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `|q| - 1` accepted by [`quat_to_rotmat`] and [`Pose::new`].
pub const UNIT_TOLERANCE: f64 = 1e-6;

/// Rotation matrix of the quaternion `q = (qr, qi, qj, qk)`.
///
/// Fails when `q` is not unit length within [`UNIT_TOLERANCE`].
pub fn quat_to_rotmat(q: [f64; 4]) -> Result<Matrix3<f64>> {
    let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::invalid(format!(
            "quaternion norm {norm} is not 1 within {UNIT_TOLERANCE}"
        )));
    }
    Ok(quat_to_rotmat_raw(q))
}

/// The quaternion-to-rotation formula evaluated on raw components, without a
/// unit-norm check. Orthonormal only when `q` is unit length; the pose
/// gradient differentiates exactly this expression.
pub fn quat_to_rotmat_raw(q: [f64; 4]) -> Matrix3<f64> {
    let [r, i, j, k] = q;
    2.0 * Matrix3::new(
        0.5 - (j * j + k * k),
        i * j - r * k,
        i * k + r * j,
        i * j + r * k,
        0.5 - (i * i + k * k),
        j * k - r * i,
        i * k - r * j,
        j * k + r * i,
        0.5 - (i * i + j * j),
    )
}

/// Partial derivatives of [`quat_to_rotmat_raw`] with respect to
/// `(qr, qi, qj, qk)`.
pub fn quat_to_rotmat_jacobian(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [r, i, j, k] = q;
    [
        2.0 * Matrix3::new(0.0, -k, j, k, 0.0, -i, -j, i, 0.0),
        2.0 * Matrix3::new(0.0, j, k, j, -2.0 * i, -r, k, r, -2.0 * i),
        2.0 * Matrix3::new(-2.0 * j, i, r, i, 0.0, k, -r, k, -2.0 * j),
        2.0 * Matrix3::new(-2.0 * k, -r, i, r, -2.0 * k, j, i, j, 0.0),
    ]
}

/// Skew-symmetric matrix `[w]x` such that `[w]x v = w x v`.
pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rigid transform with a unit quaternion rotation, world-to-camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    /// `(qr, qi, qj, qk)`, unit length, `qr >= 0`.
    q: [f64; 4],
    t: [f64; 3],
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

fn canonical(mut q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    for c in &mut q {
        *c /= n;
    }
    if q[0] < 0.0 || (q[0] == 0.0 && q[1..].iter().find(|c| **c != 0.0).is_some_and(|c| *c < 0.0)) {
        for c in &mut q {
            *c = -*c;
        }
    }
    q
}

impl Pose {
    pub fn identity() -> Self {
        Pose {
            q: [1.0, 0.0, 0.0, 0.0],
            t: [0.0; 3],
        }
    }

    /// Builds a pose from a quaternion within [`UNIT_TOLERANCE`] of unit
    /// length. The quaternion is renormalized and sign-canonicalized.
    pub fn new(q: [f64; 4], t: Vector3<f64>) -> Result<Self> {
        quat_to_rotmat(q)?;
        if !t.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("translation is not finite"));
        }
        Ok(Pose {
            q: canonical(q),
            t: t.into(),
        })
    }

    /// Normalizes an arbitrary nonzero quaternion. Used after additive
    /// optimizer steps.
    pub fn from_unnormalized(q: [f64; 4], t: Vector3<f64>) -> Result<Self> {
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 1e-12) || !t.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("degenerate pose parameters"));
        }
        Ok(Pose {
            q: canonical(q),
            t: t.into(),
        })
    }

    pub fn from_unit_quaternion(rotation: &UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        let q = rotation.quaternion();
        Pose {
            q: canonical([q.w, q.i, q.j, q.k]),
            t: t.into(),
        }
    }

    pub fn from_rotation_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Self {
        let rot = nalgebra::Rotation3::from_matrix(r);
        Self::from_unit_quaternion(&UnitQuaternion::from_rotation_matrix(&rot), t)
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Pose {
            q: [1.0, 0.0, 0.0, 0.0],
            t: t.into(),
        }
    }

    pub fn quaternion(&self) -> [f64; 4] {
        self.q
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::new_unchecked(Quaternion::new(self.q[0], self.q[1], self.q[2], self.q[3]))
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::from(self.t)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        quat_to_rotmat_raw(self.q)
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * x + self.translation()
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation().transpose();
        let [r, i, j, k] = self.q;
        Pose {
            q: canonical([r, -i, -j, -k]),
            t: (-(rt * self.translation())).into(),
        }
    }

    /// `self * other` as homogeneous transforms: `other` is applied first.
    pub fn compose(&self, other: &Pose) -> Pose {
        let q = self.unit_quaternion() * other.unit_quaternion();
        let t = self.rotation() * other.translation() + self.translation();
        Pose::from_unit_quaternion(&q, t)
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation());
        m
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    /// Rotation angle between two poses, radians.
    pub fn rotation_distance(&self, other: &Pose) -> f64 {
        self.unit_quaternion().angle_to(&other.unit_quaternion())
    }
}

/// `exp` of a twist with independent rotation and translation parts: the
/// rotation is `exp([omega]x)` and the translation is `v` unchanged.
pub fn se3_exp(omega: &Vector3<f64>, v: &Vector3<f64>) -> Pose {
    Pose::from_unit_quaternion(&so3_exp(omega), *v)
}

/// Rodrigues rotation for the axis-angle vector `omega`.
pub fn so3_exp(omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = omega.norm();
    if theta < 1e-12 {
        // second-order series keeps the map smooth at zero
        let half = omega * 0.5;
        return UnitQuaternion::from_quaternion(Quaternion::new(1.0 - theta * theta / 8.0, half.x, half.y, half.z));
    }
    let axis = omega / theta;
    let s = (theta * 0.5).sin();
    UnitQuaternion::new_unchecked(Quaternion::new(
        (theta * 0.5).cos(),
        axis.x * s,
        axis.y * s,
        axis.z * s,
    ))
}

/// Inverse of [`so3_exp`]; the result has norm in `[0, pi]`.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut w = q.w;
    let mut v = q.imag();
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let s = v.norm();
    if s < 1e-12 {
        return v * 2.0;
    }
    let theta = 2.0 * s.atan2(w);
    v * (theta / s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_2, PI};

    fn random_pose(seed: u64) -> Pose {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let t = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        se3_exp(&w, &t)
    }

    #[test]
    fn identity_quaternion_gives_identity_matrix() {
        assert_eq!(quat_to_rotmat([1.0, 0.0, 0.0, 0.0]).unwrap(), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_x_maps_y_to_z() {
        let r = quat_to_rotmat([FRAC_1_SQRT_2, FRAC_1_SQRT_2, 0.0, 0.0]).unwrap();
        let y = r * Vector3::y();
        assert!((y - Vector3::z()).norm() < 1e-15);
    }

    #[test]
    fn non_unit_quaternion_rejected() {
        assert!(matches!(quat_to_rotmat([1.0, 0.1, 0.0, 0.0]), Err(Error::InvalidArgument(_))));
        assert!(Pose::new([2.0, 0.0, 0.0, 0.0], Vector3::zeros()).is_err());
    }

    #[test]
    fn formula_agrees_with_nalgebra() {
        for seed in 0..50 {
            let p = random_pose(seed);
            let ours = quat_to_rotmat(p.quaternion()).unwrap();
            let theirs = p.unit_quaternion().to_rotation_matrix().into_inner();
            assert!((ours - theirs).norm() < 1e-12);
            assert!((ours.transpose() * ours - Matrix3::identity()).norm() < 1e-12);
            assert!((ours.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rotmat_jacobian_matches_finite_differences() {
        let q = [0.3, -0.5, 0.7, 0.1];
        let jac = quat_to_rotmat_jacobian(q);
        let h = 1e-6;
        for (c, analytic) in jac.iter().enumerate() {
            let mut qp = q;
            let mut qm = q;
            qp[c] += h;
            qm[c] -= h;
            let fd = (quat_to_rotmat_raw(qp) - quat_to_rotmat_raw(qm)) / (2.0 * h);
            assert!((fd - analytic).norm() < 1e-8, "component {c}");
        }
    }

    #[test]
    fn compose_identity_and_inverse() {
        for seed in 0..20 {
            let p = random_pose(seed);
            let a = p.compose(&Pose::identity());
            assert!((a.to_matrix() - p.to_matrix()).norm() < 1e-12);
            let id = p.compose(&p.inverse());
            assert!((id.to_matrix() - Matrix4::identity()).norm() < 1e-10);
        }
    }

    #[test]
    fn compose_pure_translations() {
        let a = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = Pose::from_translation(Vector3::new(0.0, 2.0, 0.0));
        assert_eq!(a.compose(&b).translation(), Vector3::new(1.0, 2.0, 0.0));
    }

    #[test]
    fn compose_matches_matrix_product() {
        let a = random_pose(101);
        let b = random_pose(202);
        let m = a.to_matrix() * b.to_matrix();
        assert!((a.compose(&b).to_matrix() - m).norm() < 1e-12);
    }

    #[test]
    fn exp_zero_is_identity() {
        let p = se3_exp(&Vector3::zeros(), &Vector3::zeros());
        assert_eq!(p.to_matrix(), Matrix4::identity());
    }

    #[test]
    fn exp_quarter_turn_about_x() {
        // Rodrigues by hand: R = I + [x]x for theta = pi/2 since sin = 1, 1 - cos = 1.
        let x = Vector3::x();
        let expected = Matrix3::identity() + skew(&x) + skew(&x) * skew(&x);
        let p = se3_exp(&Vector3::new(FRAC_PI_2, 0.0, 0.0), &Vector3::zeros());
        assert!((p.rotation() - expected).norm() < 1e-15);
    }

    #[test]
    fn exp_log_round_trip() {
        for seed in 0..200u64 {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let theta = rng.random_range(0.0..PI * 0.999);
            let w = dir * theta;
            let back = so3_log(&so3_exp(&w));
            assert!((back.norm() - theta).abs() < 1e-9);
            assert!((back - w).norm() < 1e-9);
        }
    }

    #[test]
    fn quaternion_sign_is_canonical() {
        let p = Pose::new([-1.0, 0.0, 0.0, 0.0], Vector3::zeros()).unwrap();
        assert_eq!(p.quaternion(), [1.0, 0.0, 0.0, 0.0]);
        let p = Pose::from_unnormalized([-0.5, 0.5, 0.5, 0.5], Vector3::zeros()).unwrap();
        assert!(p.quaternion()[0] > 0.0);
    }

    #[test]
    fn camera_center_is_inverse_translation() {
        let p = random_pose(7);
        assert!((p.camera_center() - p.inverse().translation()).norm() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pose_strategy() -> impl Strategy<Value = Pose> {
            (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(-5.0..5.0f64))
                .prop_map(|(w, t)| se3_exp(&Vector3::from(w), &Vector3::from(t)))
        }

        proptest! {
            #[test]
            fn rotation_preserves_norm(p in pose_strategy(), x in prop::array::uniform3(-10.0..10.0f64)) {
                let x = Vector3::from(x);
                let r = quat_to_rotmat(p.quaternion()).unwrap();
                prop_assert!(((r * x).norm() - x.norm()).abs() < 1e-10);
            }

            #[test]
            fn compose_is_associative(a in pose_strategy(), b in pose_strategy(), c in pose_strategy()) {
                let left = a.compose(&b).compose(&c);
                let right = a.compose(&b.compose(&c));
                prop_assert!((left.to_matrix() - right.to_matrix()).norm() < 1e-10);
            }
        }
    }
}
