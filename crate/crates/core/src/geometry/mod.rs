//! Projective geometry: poses, quadrics, conics and the detector sensor model.

mod bbox;
mod camera;
mod conic;
mod pose;
mod quadric;
mod sensor;

pub use bbox::{back_project_line, BoundingBox, Line2D, Plane};
pub use camera::CameraIntrinsics;
pub use conic::{adjugate3, Conic, DualConic};
pub use pose::SE3Pose;
pub use quadric::{ConstrainedDualQuadric, GeneralDualQuadric};
pub use sensor::{predict_bbox, predict_bbox_naive, project_quadric};

pub(crate) use pose::so3_log;
#[cfg(test)]
pub(crate) use pose::skew;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("rotation is not orthonormal (max |RᵀR−I| = {ortho:e}, det = {det})")]
    InvalidRotation { ortho: f64, det: f64 },
    #[error("look-at direction is degenerate")]
    DegenerateLookAt,
    #[error("camera intrinsics must have positive focal lengths and image size")]
    InvalidIntrinsics,
    #[error("quadric parameters are not finite or semi-axes are not positive")]
    InvalidQuadric,
    #[error("bounding box has min > max or non-finite coordinates")]
    InvalidBox,
    #[error("projected conic is not a real ellipse")]
    NotAnEllipse,
    #[error("projected conic does not intersect the image")]
    NotVisible,
    #[error("quadric centroid is behind the camera")]
    BehindCamera,
}
