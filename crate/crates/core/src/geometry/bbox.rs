use nalgebra::{Matrix3x4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use super::{CameraIntrinsics, GeometryError};

/// Axis-aligned image box `(x_min, y_min, x_max, y_max)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        let b = Self {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        let finite = b.to_array().iter().all(|v| v.is_finite());
        if !finite || x_min > x_max || y_min > y_max {
            return Err(GeometryError::InvalidBox);
        }
        Ok(b)
    }

    pub fn from_array(v: [f64; 4]) -> Result<Self, GeometryError> {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::from(self.to_array())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// The four boundary lines `x = x_min`, `y = y_min`, `x = x_max`, `y = y_max`.
    pub fn lines(&self) -> [Line2D; 4] {
        [
            Line2D::new(1.0, 0.0, -self.x_min),
            Line2D::new(0.0, 1.0, -self.y_min),
            Line2D::new(1.0, 0.0, -self.x_max),
            Line2D::new(0.0, 1.0, -self.y_max),
        ]
    }

    /// Corners in homogeneous pixel coordinates.
    pub fn corners(&self) -> [Vector3<f64>; 4] {
        [
            Vector3::new(self.x_min, self.y_min, 1.0),
            Vector3::new(self.x_max, self.y_min, 1.0),
            Vector3::new(self.x_max, self.y_max, 1.0),
            Vector3::new(self.x_min, self.y_max, 1.0),
        ]
    }

    /// Intersection with the image rectangle.
    pub fn clamp_to(&self, k: &CameraIntrinsics) -> Self {
        let cx = |v: f64| v.clamp(0.0, k.width);
        let cy = |v: f64| v.clamp(0.0, k.height);
        Self {
            x_min: cx(self.x_min),
            y_min: cy(self.y_min),
            x_max: cx(self.x_max),
            y_max: cy(self.y_max),
        }
    }

    /// Whether any side lies on the image border (within `tol` pixels).
    pub fn touches_border(&self, k: &CameraIntrinsics, tol: f64) -> bool {
        self.x_min <= tol
            || self.y_min <= tol
            || self.x_max >= k.width - tol
            || self.y_max >= k.height - tol
    }

    /// Per-side mask of lines lying on the image border.
    pub fn border_sides(&self, k: &CameraIntrinsics, tol: f64) -> [bool; 4] {
        [
            self.x_min <= tol,
            self.y_min <= tol,
            self.x_max >= k.width - tol,
            self.y_max >= k.height - tol,
        ]
    }
}

/// Homogeneous image line `l` with `lᵀp = 0` for points `p` on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line2D(pub Vector3<f64>);

impl Line2D {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self(Vector3::new(a, b, c))
    }
}

/// Homogeneous plane `π` with `πᵀX = 0` for points `X` on it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane(pub Vector4<f64>);

impl Plane {
    pub fn normalized(&self) -> Plane {
        Plane(self.0.normalize())
    }
}

/// Plane through the camera centre that projects onto `line`: `π = Pᵀl`.
pub fn back_project_line(p: &Matrix3x4<f64>, line: &Line2D) -> Plane {
    Plane(p.transpose() * line.0)
}
