//! Rigid-body poses in SE(3).
//!
//! Tangent vectors are ordered `(ω, v)`: rotation increment first, then
//! translation increment.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use super::GeometryError;
use crate::tolerances::Tolerances;

/// A rigid transform `x ↦ R·x + t`.
///
/// Robot and camera poses map body (camera) coordinates into the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SE3Pose {
    rotation: Rotation3<f64>,
    translation: Vector3<f64>,
}

impl Default for SE3Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl SE3Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from a rotation matrix, checking orthonormality.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let tol = Tolerances::DEFAULT.rotation_orthonormality;
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > tol || (det - 1.0).abs() > tol {
            return Err(GeometryError::InvalidRotation { ortho, det });
        }
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    pub fn from_parts(rotation: Rotation3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::identity(),
            translation,
        }
    }

    pub fn from_quaternion(q: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: q.to_rotation_matrix(),
            translation,
        }
    }

    /// Camera pose at `eye` looking at `target`, with `up` the world up direction.
    ///
    /// The camera frame has +z forward, +x right and +y down.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(GeometryError::DegenerateLookAt);
        }
        let forward = forward.normalize();
        let right = forward.cross(&up);
        if right.norm() < 1e-12 {
            return Err(GeometryError::DegenerateLookAt);
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let m = Matrix3::from_columns(&[right, down, forward]);
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(m),
            translation: eye,
        })
    }

    pub fn rotation(&self) -> &Rotation3<f64> {
        &self.rotation
    }

    pub fn rotation_matrix(&self) -> &Matrix3<f64> {
        self.rotation.matrix()
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Unit quaternion with non-negative scalar part.
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        let q = UnitQuaternion::from_rotation_matrix(&self.rotation);
        if q.w < 0.0 {
            UnitQuaternion::new_unchecked(-q.into_inner())
        } else {
            q
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rinv = self.rotation.inverse();
        Self {
            rotation: rinv,
            translation: -(rinv * self.translation),
        }
    }

    /// Group composition `self · other`.
    pub fn compose(&self, other: &SE3Pose) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// `self⁻¹ · other`, so that `self.compose(&self.between(other)) == other`.
    pub fn between(&self, other: &SE3Pose) -> Self {
        self.inverse().compose(other)
    }

    /// `self · Exp(delta)` with `delta = (ω, v)`.
    pub fn retract(&self, delta: &Vector6<f64>) -> Self {
        self.compose(&Self::exp(delta))
    }

    /// `Log(self⁻¹ · other)`, the inverse of [`SE3Pose::retract`].
    pub fn local(&self, other: &SE3Pose) -> Vector6<f64> {
        self.between(other).log()
    }

    /// Exponential map of a twist `(ω, v)`.
    pub fn exp(delta: &Vector6<f64>) -> Self {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let v = Vector3::new(delta[3], delta[4], delta[5]);
        let rotation = Rotation3::new(omega);
        Self {
            rotation,
            translation: left_jacobian_so3(&omega) * v,
        }
    }

    /// Logarithm map, returning the twist `(ω, v)`.
    pub fn log(&self) -> Vector6<f64> {
        let omega = so3_log(&self.rotation);
        let v = inverse_left_jacobian_so3(&omega) * self.translation;
        Vector6::new(omega.x, omega.y, omega.z, v.x, v.y, v.z)
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        so3_log(&self.rotation).norm()
    }
}

/// Rotation vector of `r`, accurate for small angles.
pub(crate) fn so3_log(r: &Rotation3<f64>) -> Vector3<f64> {
    let q = UnitQuaternion::from_rotation_matrix(r);
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let n = v.norm();
    if n < 1e-12 {
        return v * (2.0 / w);
    }
    v * (2.0 * n.atan2(w) / n)
}

pub(crate) fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// V(ω) such that the SE(3) exponential has translation V(ω)·v.
fn left_jacobian_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + w * a + w * w * b
}

fn inverse_left_jacobian_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = skew(omega);
    let c = if theta2 < 1e-10 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        let theta = theta2.sqrt();
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
    };
    Matrix3::identity() - w * 0.5 + w * w * c
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    fn sample_pose() -> SE3Pose {
        SE3Pose::exp(&Vector6::new(0.3, -0.2, 0.9, 1.0, -2.0, 0.5))
    }

    #[test]
    fn angle_is_finite_near_identity() {
        let p = sample_pose();
        assert_eq!(p.between(&p).angle(), 0.0);
        let tiny = SE3Pose::exp(&Vector6::new(1e-10, 0.0, 0.0, 0.0, 0.0, 0.0));
        assert_relative_eq!(tiny.angle(), 1e-10, max_relative = 1e-6);
        assert_relative_eq!(p.angle(), Vector3::new(0.3, -0.2, 0.9).norm(), epsilon = 1e-12);
    }

    #[test]
    fn identity_is_neutral() {
        let p = sample_pose();
        assert_relative_eq!(
            SE3Pose::identity().compose(&p).log(),
            p.log(),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            p.compose(&p.inverse()).log(),
            Vector6::zeros(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn compose_applies_right_then_left() {
        let a = SE3Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let b = SE3Pose::exp(&Vector6::new(0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0));
        let p = a.compose(&b).transform_point(&Vector3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(p, Vector3::new(1.0, 1.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn between_cases() {
        let p = sample_pose();
        assert_relative_eq!(p.between(&p).log(), Vector6::zeros(), epsilon = 1e-12);
        assert_relative_eq!(
            SE3Pose::identity().between(&p).log(),
            p.log(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn retract_quarter_turn_about_z() {
        let r = SE3Pose::identity().retract(&Vector6::new(0.0, 0.0, FRAC_PI_2, 0.0, 0.0, 0.0));
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(*r.rotation_matrix(), expected, epsilon = 1e-12);
        assert_relative_eq!(*r.translation(), Vector3::zeros());
    }

    #[test]
    fn retract_zero_and_first_order() {
        let p = sample_pose();
        assert_eq!(p.retract(&Vector6::zeros()), p);
        let d = Vector6::new(1.0, -2.0, 0.5, 0.3, 0.7, -1.1).normalize() * 1e-4;
        let back = p.local(&p.retract(&d));
        assert!((back.norm() - d.norm()).abs() < 1e-8 * 1e-4 + 1e-12);
    }

    #[test]
    fn pure_translation_log() {
        let p = SE3Pose::from_translation(Vector3::new(0.1, -0.2, 0.3));
        assert_relative_eq!(
            p.log(),
            Vector6::new(0.0, 0.0, 0.0, 0.1, -0.2, 0.3),
            epsilon = 1e-15
        );
    }

    #[test]
    fn rejects_non_orthonormal() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(SE3Pose::new(m, Vector3::zeros()).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(SE3Pose::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn look_at_frame_is_proper() {
        let p = SE3Pose::look_at(
            Vector3::new(5.0, 0.0, 1.0),
            Vector3::zeros(),
            Vector3::z(),
        )
        .unwrap();
        let r = p.rotation_matrix();
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        let target_cam = p.inverse().transform_point(&Vector3::zeros());
        assert!(target_cam.z > 0.0);
        assert_relative_eq!(target_cam.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(target_cam.y, 0.0, epsilon = 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn between_round_trip(a in proptest::array::uniform6(-3.0f64..3.0),
                              b in proptest::array::uniform6(-3.0f64..3.0)) {
            let pa = SE3Pose::exp(&Vector6::from_row_slice(&a));
            let pb = SE3Pose::exp(&Vector6::from_row_slice(&b));
            let back = pa.compose(&pa.between(&pb));
            proptest::prop_assert!((back.rotation_matrix() - pb.rotation_matrix()).abs().max() < 1e-9);
            proptest::prop_assert!((back.translation() - pb.translation()).abs().max() < 1e-9);
        }

        #[test]
        fn exp_log_round_trip(d in proptest::array::uniform6(-1.5f64..1.5)) {
            let d = Vector6::from_row_slice(&d);
            let back = SE3Pose::exp(&d).log();
            proptest::prop_assert!((back - d).abs().max() < 1e-9);
        }
    }
}
