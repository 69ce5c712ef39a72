//! Dual quadric representations.

use nalgebra::{Matrix3, Matrix4, Rotation3, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::GeometryError;

/// Ellipsoid landmark parametrized by rotation (axis-angle), centroid and
/// semi-axis lengths.
///
/// The dual matrix is `Q* = Z · diag(s₁², s₂², s₃², −1) · Zᵀ` where `Z` is the
/// homogeneous transform built from the rotation and centroid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedDualQuadric {
    pub theta: Vector3<f64>,
    pub t: Vector3<f64>,
    pub s: Vector3<f64>,
}

impl ConstrainedDualQuadric {
    pub fn new(
        theta: Vector3<f64>,
        t: Vector3<f64>,
        s: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        let q = Self { theta, t, s };
        q.validate()?;
        Ok(q)
    }

    pub fn from_rotation(
        rotation: &Rotation3<f64>,
        t: Vector3<f64>,
        s: Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        Self::new(super::so3_log(rotation), t, s)
    }

    /// Axis-aligned ellipsoid.
    pub fn axis_aligned(t: Vector3<f64>, s: Vector3<f64>) -> Result<Self, GeometryError> {
        Self::new(Vector3::zeros(), t, s)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = self.theta.iter().chain(self.t.iter()).all(|v| v.is_finite());
        if !finite || self.s.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(GeometryError::InvalidQuadric);
        }
        Ok(())
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::new(self.theta)
    }

    /// Homogeneous transform `Z` placing the canonical ellipsoid in the world.
    pub fn transform(&self) -> Matrix4<f64> {
        let mut z = Matrix4::identity();
        z.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(self.rotation().matrix());
        z.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        z
    }

    /// Reconstructs the 4×4 dual quadric matrix.
    pub fn matrix(&self) -> Matrix4<f64> {
        let z = self.transform();
        let canonical = Matrix4::from_diagonal(&Vector4::new(
            self.s.x * self.s.x,
            self.s.y * self.s.y,
            self.s.z * self.s.z,
            -1.0,
        ));
        let q = z * canonical * z.transpose();
        // exact symmetry
        (q + q.transpose()) * 0.5
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.s.x * self.s.y * self.s.z
    }

    /// Half-extents of the world-axis-aligned box tightly enclosing the ellipsoid.
    pub fn aabb_half_extents(&self) -> Vector3<f64> {
        let r = self.rotation();
        let m: &Matrix3<f64> = r.matrix();
        Vector3::from_fn(|k, _| {
            (0..3)
                .map(|i| (m[(k, i)] * self.s[i]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
    }
}

/// Generic dual quadric as the 10 independent entries of a symmetric 4×4
/// matrix, ordered `(Q₁₁, Q₁₂, Q₁₃, Q₁₄, Q₂₂, Q₂₃, Q₂₄, Q₃₃, Q₃₄, Q₄₄)`.
///
/// Defined up to scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralDualQuadric {
    pub qhat: SVector<f64, 10>,
}

/// Row/column index pairs matching the `qhat` ordering.
pub(crate) const UPPER_TRIANGLE: [(usize, usize); 10] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (0, 3),
    (1, 1),
    (1, 2),
    (1, 3),
    (2, 2),
    (2, 3),
    (3, 3),
];

impl GeneralDualQuadric {
    pub fn new(qhat: SVector<f64, 10>) -> Result<Self, GeometryError> {
        if qhat.norm().is_nan() || qhat.norm() <= 0.0 {
            return Err(GeometryError::InvalidQuadric);
        }
        Ok(Self { qhat })
    }

    pub fn from_matrix(m: &Matrix4<f64>) -> Self {
        Self {
            qhat: SVector::<f64, 10>::from_fn(|k, _| {
                let (i, j) = UPPER_TRIANGLE[k];
                m[(i, j)]
            }),
        }
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        for (k, &(i, j)) in UPPER_TRIANGLE.iter().enumerate() {
            m[(i, j)] = self.qhat[k];
            m[(j, i)] = self.qhat[k];
        }
        m
    }
}

impl From<&ConstrainedDualQuadric> for GeneralDualQuadric {
    fn from(q: &ConstrainedDualQuadric) -> Self {
        Self::from_matrix(&q.matrix())
    }
}
