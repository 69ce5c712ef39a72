use nalgebra::{Matrix4, Matrix6, Vector4, Vector6};
use serde::{Deserialize, Serialize};

use super::GraphError;
use crate::geometry::{
    back_project_line, predict_bbox, BoundingBox, CameraIntrinsics, ConstrainedDualQuadric,
    GeometryError, SE3Pose,
};

/// Which landmark error the box factors use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ErrorMode {
    /// Pixel difference between observed and predicted boxes.
    #[default]
    Geometric,
    /// Tangency of back-projected box planes to the dual quadric.
    Algebraic,
}

impl std::fmt::Display for ErrorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ErrorMode::Geometric => "geometric",
            ErrorMode::Algebraic => "algebraic",
        })
    }
}

impl std::str::FromStr for ErrorMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "geometric" => Ok(ErrorMode::Geometric),
            "algebraic" => Ok(ErrorMode::Algebraic),
            other => Err(format!("unknown error mode '{other}'")),
        }
    }
}

/// Inverse Cholesky factor `L⁻¹` of a covariance `Σ = L Lᵀ`, so that
/// `‖L⁻¹ r‖² = rᵀ Σ⁻¹ r`.
fn whitener<const N: usize>(
    sigma: &nalgebra::SMatrix<f64, N, N>,
) -> Result<nalgebra::SMatrix<f64, N, N>, GraphError> {
    let asym = (sigma - sigma.transpose()).abs().max();
    if asym > 1e-9 * sigma.abs().max() {
        return Err(GraphError::NotPositiveDefinite);
    }
    let chol = sigma.cholesky().ok_or(GraphError::NotPositiveDefinite)?;
    chol.l()
        .try_inverse()
        .ok_or(GraphError::NotPositiveDefinite)
}

/// Relative-pose measurement `u` between poses `i` and `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdometryFactor {
    pub i: usize,
    pub u: SE3Pose,
    pub sigma: Matrix6<f64>,
    whiten: Matrix6<f64>,
}

impl OdometryFactor {
    pub fn new(i: usize, u: SE3Pose, sigma: Matrix6<f64>) -> Result<Self, GraphError> {
        Ok(Self {
            i,
            u,
            whiten: whitener(&sigma)?,
            sigma,
        })
    }

    /// Diagonal covariance from rotation (rad) and translation (m) standard deviations.
    pub fn diagonal(
        i: usize,
        u: SE3Pose,
        rot_sigma: f64,
        trans_sigma: f64,
    ) -> Result<Self, GraphError> {
        let (r, t) = (rot_sigma * rot_sigma, trans_sigma * trans_sigma);
        Self::new(
            i,
            u,
            Matrix6::from_diagonal(&Vector6::new(r, r, r, t, t, t)),
        )
    }
}

/// Box detection of landmark `j` from pose `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BBoxFactor {
    pub i: usize,
    pub j: usize,
    pub b: BoundingBox,
    pub lambda: Matrix4<f64>,
    whiten: Matrix4<f64>,
}

impl BBoxFactor {
    pub fn new(i: usize, j: usize, b: BoundingBox, lambda: Matrix4<f64>) -> Result<Self, GraphError> {
        Ok(Self {
            i,
            j,
            b,
            whiten: whitener(&lambda)?,
            lambda,
        })
    }
}

/// `Log((xᵢ·u)⁻¹ · xᵢ₊₁)`, whitened.
pub fn odometry_residual(f: &OdometryFactor, xi: &SE3Pose, xnext: &SE3Pose) -> Vector6<f64> {
    f.whiten * xi.compose(&f.u).local(xnext)
}

/// The box prediction failed for this iterate; the factor is left out.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorSkipped(pub GeometryError);

/// `b − β(xᵢ, qⱼ)`, whitened.
pub fn bbox_residual(
    f: &BBoxFactor,
    xi: &SE3Pose,
    qj: &ConstrainedDualQuadric,
    k: &CameraIntrinsics,
) -> Result<Vector4<f64>, FactorSkipped> {
    let predicted = predict_bbox(xi, k, qj).map_err(FactorSkipped)?;
    Ok(f.whiten * (f.b.to_vector() - predicted.to_vector()))
}

/// `πₖᵀ Q* πₖ` for the four back-projected box sides, with unit-norm planes
/// and unit-Frobenius `Q*`, whitened.
pub fn algebraic_residual(
    f: &BBoxFactor,
    xi: &SE3Pose,
    qj: &ConstrainedDualQuadric,
    k: &CameraIntrinsics,
) -> Vector4<f64> {
    let p = k.projection_matrix(xi);
    let q = qj.matrix();
    let q = q / q.norm();
    let lines = f.b.lines();
    let r = Vector4::from_fn(|m, _| {
        let pi = back_project_line(&p, &lines[m]).normalized().0;
        pi.dot(&(q * pi))
    });
    f.whiten * r
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn scene() -> (SE3Pose, CameraIntrinsics, ConstrainedDualQuadric) {
        let pose = SE3Pose::look_at(
            Vector3::new(-5.0, 1.0, 1.0),
            Vector3::new(0.0, 0.0, 0.5),
            Vector3::z(),
        )
        .unwrap();
        let q = ConstrainedDualQuadric::new(
            Vector3::new(0.0, 0.0, 0.3),
            Vector3::new(0.0, 0.0, 0.5),
            Vector3::new(0.6, 0.4, 0.5),
        )
        .unwrap();
        (pose, CameraIntrinsics::default(), q)
    }

    #[test]
    fn odometry_residual_cases() {
        let xi = SE3Pose::exp(&Vector6::new(0.1, 0.2, 0.3, 1.0, 2.0, 3.0));
        let u = SE3Pose::exp(&Vector6::new(0.0, 0.0, 0.2, 0.5, 0.0, 0.0));
        let f = OdometryFactor::new(0, u, Matrix6::identity()).unwrap();
        let xnext = xi.compose(&u);
        assert_relative_eq!(odometry_residual(&f, &xi, &xnext), Vector6::zeros(), epsilon = 1e-12);

        let delta = Vector3::new(0.1, -0.2, 0.05);
        let shifted = xnext.compose(&SE3Pose::from_translation(delta));
        let r = odometry_residual(&f, &xi, &shifted);
        assert_relative_eq!(r, Vector6::new(0.0, 0.0, 0.0, delta.x, delta.y, delta.z), epsilon = 1e-12);

        let f4 = OdometryFactor::new(0, u, Matrix6::identity() / 4.0).unwrap();
        assert_relative_eq!(odometry_residual(&f4, &xi, &shifted).norm(), 2.0 * r.norm(), epsilon = 1e-12);
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let mut s = Matrix6::identity();
        s[(2, 2)] = -1.0;
        assert!(OdometryFactor::new(0, SE3Pose::identity(), s).is_err());
        let mut a = Matrix4::identity();
        a[(0, 1)] = 0.5;
        assert!(BBoxFactor::new(0, 0, BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), a).is_err());
    }

    #[test]
    fn bbox_residual_cases() {
        let (pose, k, q) = scene();
        let b = predict_bbox(&pose, &k, &q).unwrap();
        let f = BBoxFactor::new(0, 0, b, Matrix4::identity() * 4.0).unwrap();
        assert_relative_eq!(bbox_residual(&f, &pose, &q, &k).unwrap(), Vector4::zeros(), epsilon = 1e-12);

        let shifted = BoundingBox::new(b.x_min + 2.0, b.y_min, b.x_max, b.y_max).unwrap();
        let f = BBoxFactor::new(0, 0, shifted, Matrix4::identity() * 4.0).unwrap();
        assert_relative_eq!(
            bbox_residual(&f, &pose, &q, &k).unwrap(),
            Vector4::new(1.0, 0.0, 0.0, 0.0),
            epsilon = 1e-9
        );

        let behind = SE3Pose::look_at(Vector3::new(-5.0, 0.0, 1.0), Vector3::new(-10.0, 0.0, 1.0), Vector3::z())
            .unwrap();
        assert_eq!(
            bbox_residual(&f, &behind, &q, &k),
            Err(FactorSkipped(GeometryError::BehindCamera))
        );
    }

    #[test]
    fn covariance_scaling_whitening() {
        let (pose, k, q) = scene();
        let b = predict_bbox(&pose, &k, &q).unwrap();
        let obs = BoundingBox::new(b.x_min + 1.0, b.y_min - 3.0, b.x_max + 0.5, b.y_max).unwrap();
        let f1 = BBoxFactor::new(0, 0, obs, Matrix4::identity()).unwrap();
        let f9 = BBoxFactor::new(0, 0, obs, Matrix4::identity() * 9.0).unwrap();
        let r1 = bbox_residual(&f1, &pose, &q, &k).unwrap().norm_squared();
        let r9 = bbox_residual(&f9, &pose, &q, &k).unwrap().norm_squared();
        assert_relative_eq!(r9, r1 / 9.0, epsilon = 1e-12);
    }

    #[test]
    fn truncated_detection_geometric_vs_naive() {
        use crate::geometry::predict_bbox_naive;
        let k = CameraIntrinsics::default();
        let q = ConstrainedDualQuadric::axis_aligned(Vector3::new(-5.5, 0.0, 5.0), Vector3::repeat(1.5)).unwrap();
        let pose = SE3Pose::identity();
        let observed = predict_bbox(&pose, &k, &q).unwrap();
        let f = BBoxFactor::new(0, 0, observed, Matrix4::identity()).unwrap();
        assert!(bbox_residual(&f, &pose, &q, &k).unwrap().norm() < 1e-9);
        let naive = predict_bbox_naive(&pose, &k, &q).unwrap();
        assert!((observed.to_vector() - naive.to_vector()).norm() > 1.0);
    }

    #[test]
    fn algebraic_residual_zero_at_tangency_and_scale_free() {
        let (pose, k, q) = scene();
        let b = predict_bbox(&pose, &k, &q).unwrap();
        let f = BBoxFactor::new(0, 0, b, Matrix4::identity()).unwrap();
        assert!(algebraic_residual(&f, &pose, &q, &k).amax() < 1e-9);
        // a different observed box gives a nonzero residual
        let bigger = BoundingBox::new(b.x_min - 10.0, b.y_min - 10.0, b.x_max + 10.0, b.y_max + 10.0).unwrap();
        let g = BBoxFactor::new(0, 0, bigger, Matrix4::identity()).unwrap();
        let r = algebraic_residual(&g, &pose, &q, &k);
        assert!(r.amax() > 1e-6);
        // translating the camera-pose-independent scale of Q* changes nothing:
        // residual only sees the normalized matrix
        let p = k.projection_matrix(&pose);
        let qm = q.matrix() * 17.0;
        let qm = qm / qm.norm();
        let lines = bigger.lines();
        for m in 0..4 {
            let pi = back_project_line(&p, &lines[m]).normalized().0;
            assert_relative_eq!(pi.dot(&(qm * pi)), r[m], epsilon = 1e-12);
        }
    }

    #[test]
    fn algebraic_residual_shrinks_toward_a_point() {
        // The four box planes meet at the camera centre. Shrinking the quadric
        // about that point drives every plane residual toward zero even though
        // the shrunken quadric no longer explains the detection.
        let (pose, k, q) = scene();
        let b = predict_bbox(&pose, &k, &q).unwrap();
        let cx = 0.5 * (b.x_min + b.x_max);
        let truncated = BoundingBox::new(cx, b.y_min, b.x_max, b.y_max).unwrap();
        let f = BBoxFactor::new(0, 0, truncated, Matrix4::identity()).unwrap();
        let apex = *pose.translation();
        let mut last = f64::INFINITY;
        for step in 0..20 {
            let alpha = 1.0 - 0.049 * step as f64;
            let shrunk = ConstrainedDualQuadric::new(q.theta, apex + (q.t - apex) * alpha, q.s * alpha).unwrap();
            let r = algebraic_residual(&f, &pose, &shrunk, &k);
            assert!(r.norm() < last, "alpha {alpha}: {} !< {last}", r.norm());
            last = r.norm();
        }
        let start = algebraic_residual(&f, &pose, &q, &k).norm();
        assert!(last < 0.01 * start);
    }
}
