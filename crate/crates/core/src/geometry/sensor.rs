//! Bounding-box sensor model for object detectors.

use nalgebra::{Matrix3x4, Matrix4};

use super::{BoundingBox, CameraIntrinsics, Conic, ConstrainedDualQuadric, DualConic, GeometryError, SE3Pose};
use crate::tolerances::Tolerances;

/// `C* = P Q* Pᵀ`.
pub fn project_quadric(p: &Matrix3x4<f64>, q: &Matrix4<f64>) -> DualConic {
    DualConic::new(p * q * p.transpose())
}

fn projected_conic(
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    q: &ConstrainedDualQuadric,
) -> Result<Conic, GeometryError> {
    let depth = pose.inverse().transform_point(&q.t).z;
    if depth <= Tolerances::DEFAULT.min_depth {
        return Err(GeometryError::BehindCamera);
    }
    let dual = project_quadric(&k.projection_matrix(pose), &q.matrix());
    Ok(dual.primal())
}

/// Predicted detection of quadric `q` seen from camera pose `pose`: the
/// on-image box of the projected conic.
pub fn predict_bbox(
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    q: &ConstrainedDualQuadric,
) -> Result<BoundingBox, GeometryError> {
    projected_conic(pose, k, q)?.bbox_on_image(k)
}

/// Full conic box clipped to the image, without border intersections.
///
/// Used only to contrast against [`predict_bbox`] for partially visible objects.
pub fn predict_bbox_naive(
    pose: &SE3Pose,
    k: &CameraIntrinsics,
    q: &ConstrainedDualQuadric,
) -> Result<BoundingBox, GeometryError> {
    let b = projected_conic(pose, k, q)?.bounds()?;
    if b.x_max < 0.0 || b.y_max < 0.0 || b.x_min > k.width || b.y_min > k.height {
        return Err(GeometryError::NotVisible);
    }
    Ok(b.clamp_to(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3, Vector4, Vector6};

    fn sphere_at(z: f64) -> ConstrainedDualQuadric {
        ConstrainedDualQuadric::axis_aligned(Vector3::new(0.0, 0.0, z), Vector3::repeat(1.0)).unwrap()
    }

    #[test]
    fn sphere_projection_through_canonical_camera() {
        let mut p = Matrix3x4::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        let c = project_quadric(&p, &sphere_at(5.0).matrix());
        assert_relative_eq!(
            c.cstar,
            Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -24.0)),
            epsilon = 1e-12
        );
        let scaled = project_quadric(&p, &(sphere_at(5.0).matrix() * -3.0));
        assert_relative_eq!(scaled.cstar, c.cstar * -3.0, epsilon = 1e-12);
    }

    #[test]
    fn reference_sphere_box() {
        let k = CameraIntrinsics::default();
        let b = predict_bbox(&SE3Pose::identity(), &k, &sphere_at(5.0)).unwrap();
        let r = 320.0 / 24f64.sqrt();
        assert_relative_eq!(
            b.to_vector(),
            Vector4::new(320.0 - r, 240.0 - r, 320.0 + r, 240.0 + r),
            epsilon = 1e-9
        );
        assert!((b.x_min - 254.68).abs() < 5e-3 && (b.y_max - 305.32).abs() < 5e-3);
    }

    #[test]
    fn rolled_camera_swaps_extents() {
        let k = CameraIntrinsics::default();
        let q = ConstrainedDualQuadric::axis_aligned(Vector3::new(0.2, -0.1, 5.0), Vector3::new(1.5, 0.5, 0.7))
            .unwrap();
        let b = predict_bbox(&SE3Pose::identity(), &k, &q).unwrap();
        let roll = SE3Pose::exp(&Vector6::new(0.0, 0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0));
        let br = predict_bbox(&roll, &k, &q).unwrap();
        assert_relative_eq!(b.width(), br.height(), epsilon = 1e-9);
        assert_relative_eq!(b.height(), br.width(), epsilon = 1e-9);
        // camera x = world y, camera y = -world x
        let (cx, cy) = ((b.x_min + b.x_max) / 2.0 - k.cx, (b.y_min + b.y_max) / 2.0 - k.cy);
        let (rx, ry) = ((br.x_min + br.x_max) / 2.0 - k.cx, (br.y_min + br.y_max) / 2.0 - k.cy);
        assert_relative_eq!(rx, cy, epsilon = 1e-9);
        assert_relative_eq!(ry, -cx, epsilon = 1e-9);
    }

    #[test]
    fn behind_camera() {
        let k = CameraIntrinsics::default();
        assert_eq!(
            predict_bbox(&SE3Pose::identity(), &k, &sphere_at(-5.0)),
            Err(GeometryError::BehindCamera)
        );
    }

    #[test]
    fn rigid_motion_of_camera_and_quadric_preserves_conic() {
        let k = CameraIntrinsics::default();
        let pose = SE3Pose::exp(&Vector6::new(0.1, -0.2, 0.05, 0.3, 0.1, -0.4));
        let q = ConstrainedDualQuadric::new(
            Vector3::new(0.3, 0.2, -0.1),
            Vector3::new(0.5, 0.2, 6.0),
            Vector3::new(1.0, 0.6, 0.8),
        )
        .unwrap();
        let g = SE3Pose::exp(&Vector6::new(-0.7, 0.4, 1.1, 2.0, -3.0, 1.0));
        let moved = ConstrainedDualQuadric::from_rotation(
            &(g.rotation() * q.rotation()),
            g.transform_point(&q.t),
            q.s,
        )
        .unwrap();
        let c0 = project_quadric(&k.projection_matrix(&pose), &q.matrix());
        let c1 = project_quadric(&k.projection_matrix(&g.compose(&pose)), &moved.matrix());
        assert_relative_eq!(c0.cstar, c1.cstar, epsilon = 1e-6 * c0.cstar.norm());
    }

    #[test]
    fn box_lines_are_tangent_when_fully_visible() {
        let k = CameraIntrinsics::default();
        let pose = SE3Pose::exp(&Vector6::new(0.05, -0.1, 0.3, 0.0, 0.0, 0.0));
        let q = ConstrainedDualQuadric::new(
            Vector3::new(0.9, -0.4, 0.2),
            Vector3::new(0.3, -0.2, 7.0),
            Vector3::new(1.2, 0.4, 0.7),
        )
        .unwrap();
        let b = predict_bbox(&pose, &k, &q).unwrap();
        assert!(!b.touches_border(&k, 1e-9));
        let dual = project_quadric(&k.projection_matrix(&pose), &q.matrix());
        for l in b.lines() {
            assert!(dual.tangency(&l.0).abs() < 1e-6);
        }
    }

    #[test]
    fn naive_model_overestimates_truncated_objects() {
        let k = CameraIntrinsics::default();
        // sphere mostly off the left edge
        let q = ConstrainedDualQuadric::axis_aligned(Vector3::new(-5.5, 0.0, 5.0), Vector3::repeat(1.5))
            .unwrap();
        let full = predict_bbox(&SE3Pose::identity(), &k, &q).unwrap();
        let naive = predict_bbox_naive(&SE3Pose::identity(), &k, &q).unwrap();
        assert_eq!(full.x_min, 0.0);
        assert!(naive.height() > full.height() + 1.0);
    }
}
