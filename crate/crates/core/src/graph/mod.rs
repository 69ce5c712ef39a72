//! Factor graph over camera poses and quadric landmarks, solved by
//! Levenberg-Marquardt on the manifold of poses and ellipsoids.

mod factors;
mod jacobian;
mod solver;

pub use factors::{
    algebraic_residual, bbox_residual, odometry_residual, BBoxFactor, ErrorMode, FactorSkipped,
    OdometryFactor,
};
pub use jacobian::{numeric_jacobian, quadric_local, retract_quadric, Variable};
pub use solver::{
    optimize, CostRecord, NormalEquations, OptimizationResult, SkipEvent, SolverConfig,
};

use nalgebra::Matrix4;
use thiserror::Error;

use crate::geometry::{CameraIntrinsics, ConstrainedDualQuadric, SE3Pose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("covariance is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("factor references pose {0} but the graph has {1} poses")]
    PoseOutOfRange(usize, usize),
    #[error("factor references landmark {0} but the graph has {1} landmarks")]
    LandmarkOutOfRange(usize, usize),
    #[error("residual is not finite at the linearization point")]
    NonFiniteResidual,
    #[error("damping exceeded {0:e} without an accepted step")]
    DivergedDamping(f64),
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Poses, landmarks and the factors linking them.
///
/// The first pose is the gauge and stays fixed during optimization.
#[derive(Debug, Clone)]
pub struct FactorGraph {
    pub poses: Vec<SE3Pose>,
    pub quadrics: Vec<ConstrainedDualQuadric>,
    pub odometry_factors: Vec<OdometryFactor>,
    pub bbox_factors: Vec<BBoxFactor>,
    pub intrinsics: CameraIntrinsics,
    pub error_mode: ErrorMode,
}

impl FactorGraph {
    pub fn new(intrinsics: CameraIntrinsics, error_mode: ErrorMode) -> Self {
        Self {
            poses: vec![],
            quadrics: vec![],
            odometry_factors: vec![],
            bbox_factors: vec![],
            intrinsics,
            error_mode,
        }
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let (np, nq) = (self.poses.len(), self.quadrics.len());
        for f in &self.odometry_factors {
            if f.i + 1 >= np {
                return Err(GraphError::PoseOutOfRange(f.i + 1, np));
            }
        }
        for f in &self.bbox_factors {
            if f.i >= np {
                return Err(GraphError::PoseOutOfRange(f.i, np));
            }
            if f.j >= nq {
                return Err(GraphError::LandmarkOutOfRange(f.j, nq));
            }
        }
        Ok(())
    }

    /// Sum of squared whitened residuals and the number of skipped box factors.
    pub fn cost(&self, poses: &[SE3Pose], quadrics: &[ConstrainedDualQuadric]) -> (f64, usize) {
        let mut total = 0.0;
        for f in &self.odometry_factors {
            total += odometry_residual(f, &poses[f.i], &poses[f.i + 1]).norm_squared();
        }
        let mut skipped = 0;
        for f in &self.bbox_factors {
            match self.landmark_residual(f, &poses[f.i], &quadrics[f.j]) {
                Ok(r) => total += r.norm_squared(),
                Err(_) => skipped += 1,
            }
        }
        (total, skipped)
    }

    pub(crate) fn landmark_residual(
        &self,
        f: &BBoxFactor,
        pose: &SE3Pose,
        q: &ConstrainedDualQuadric,
    ) -> Result<nalgebra::Vector4<f64>, FactorSkipped> {
        match self.error_mode {
            ErrorMode::Geometric => bbox_residual(f, pose, q, &self.intrinsics),
            ErrorMode::Algebraic => Ok(algebraic_residual(f, pose, q, &self.intrinsics)),
        }
    }
}

/// Isotropic box covariance `σ² I` in px².
pub fn isotropic_box_covariance(sigma_px: f64) -> Matrix4<f64> {
    Matrix4::identity() * (sigma_px * sigma_px)
}
