//! Object-landmark SLAM with constrained dual quadrics.
//!
//! Camera trajectories and ellipsoidal object landmarks are estimated jointly
//! from odometry and 2D bounding-box detections. The crate is split into:
//!
//! * [`geometry`]: SE(3) poses, dual quadrics, conic projection and the
//!   bounding-box sensor model.
//! * [`initializer`]: linear multi-view initialization of quadric landmarks.
//! * [`graph`]: factor graph and Levenberg-Marquardt MAP optimization.
//! * [`simulator`]: synthetic scenes, trajectories, odometry and detections.
//! * [`evaluation`]: trajectory and landmark metrics, class-score fusion.
//!
//! Conventions: a pose maps camera coordinates to world coordinates; the
//! camera looks along its +z axis with +x right and +y down in the image.

pub mod evaluation;
pub mod geometry;
pub mod graph;
pub mod initializer;
pub mod simulator;
pub mod tolerances;

pub use geometry::{
    BoundingBox, CameraIntrinsics, ConstrainedDualQuadric, GeometryError, SE3Pose,
};
pub use tolerances::Tolerances;
