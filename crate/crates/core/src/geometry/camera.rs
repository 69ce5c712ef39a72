use nalgebra::{Matrix3, Matrix3x4, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, SE3Pose};

/// Pinhole intrinsics. Image borders sit at 0 and `width`/`height` exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Default for CameraIntrinsics {
    /// 640×480 camera with focal length 320 and a centred principal point.
    fn default() -> Self {
        Self {
            fx: 320.0,
            fy: 320.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: f64,
        height: f64,
    ) -> Result<Self, GeometryError> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let ok = [self.fx, self.fy, self.width, self.height]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0)
            && self.cx.is_finite()
            && self.cy.is_finite();
        if ok {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics)
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `P = K [R | t]` for a camera whose pose (camera-to-world) is `pose`.
    pub fn projection_matrix(&self, pose: &SE3Pose) -> Matrix3x4<f64> {
        let world_to_cam = pose.inverse();
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(world_to_cam.rotation_matrix());
        rt.set_column(3, world_to_cam.translation());
        self.matrix() * rt
    }

    /// Pixel coordinates of a camera-frame point; `None` at non-positive depth.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<(f64, f64)> {
        (p_cam.z > 0.0).then(|| {
            (
                self.fx * p_cam.x / p_cam.z + self.cx,
                self.fy * p_cam.y / p_cam.z + self.cy,
            )
        })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width).contains(&x) && (0.0..=self.height).contains(&y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Vector4, Vector6};

    #[test]
    fn rejects_bad_focal_length() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0, 10.0, 10.0).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 10.0, -1.0).is_err());
    }

    #[test]
    fn projection_matrix_agrees_with_point_projection() {
        let k = CameraIntrinsics::default();
        let pose = SE3Pose::exp(&Vector6::new(0.1, 0.2, -0.3, 0.5, -0.4, 0.2));
        let p = k.projection_matrix(&pose);
        let x = Vector3::new(0.3, 0.1, 4.0);
        let xw = pose.transform_point(&x);
        let h = p * Vector4::new(xw.x, xw.y, xw.z, 1.0);
        let (u, v) = k.project(&x).unwrap();
        assert_relative_eq!(h.x / h.z, u, epsilon = 1e-9);
        assert_relative_eq!(h.y / h.z, v, epsilon = 1e-9);
    }
}
