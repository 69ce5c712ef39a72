//! Odometry chaining, landmark initialization and joint optimization for one
//! trial.

use std::collections::BTreeMap;

use nalgebra::{Matrix4, Matrix6, Vector6};
use qslam_core::graph::{
    optimize, BBoxFactor, ErrorMode, FactorGraph, GraphError, OdometryFactor, OptimizationResult, SolverConfig,
};
use qslam_core::initializer::{initialize_landmark, InitConfig, LandmarkObservations};
use qslam_core::simulator::{Detection, NoiseSpec, MIN_DET_SIGMA_PX};
use qslam_core::{CameraIntrinsics, ConstrainedDualQuadric, SE3Pose};

use crate::CliError;

/// Odometry standard deviation (translation and rotation) for real data.
pub const REAL_DATA_ODOMETRY_SIGMA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub solver: SolverConfig,
    pub error_mode: ErrorMode,
    pub init: InitConfig,
    pub reject_bbox_std: Option<[f64; 2]>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            error_mode: ErrorMode::Geometric,
            init: InitConfig::default(),
            reject_bbox_std: None,
        }
    }
}

/// Inputs to one solve. `odometry` is the chained trajectory; `noise` is the
/// simulated noise model, or `None` for real data.
#[derive(Debug, Clone, Copy)]
pub struct SolveInput<'a> {
    pub intrinsics: CameraIntrinsics,
    pub odometry: &'a [SE3Pose],
    pub detections: &'a [Detection],
    pub noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone)]
pub struct Exclusion {
    pub id: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct SolveOutput {
    /// Landmarks from the linear initializer on the odometry poses.
    pub initial_landmarks: BTreeMap<u64, ConstrainedDualQuadric>,
    pub landmarks: BTreeMap<u64, ConstrainedDualQuadric>,
    pub poses: Vec<SE3Pose>,
    pub excluded: Vec<Exclusion>,
    pub result: OptimizationResult,
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Standard deviations of detection width and height for one object.
pub fn bbox_size_std(detections: &[&Detection]) -> (f64, f64) {
    let w: Vec<f64> = detections.iter().map(|d| d.bbox.width()).collect();
    let h: Vec<f64> = detections.iter().map(|d| d.bbox.height()).collect();
    (std_dev(&w), std_dev(&h))
}

fn graph_error(e: GraphError) -> CliError {
    match e {
        GraphError::DivergedDamping(_) => CliError::Divergence(e.to_string()),
        other => CliError::Dataset(other.to_string()),
    }
}

pub fn solve(input: &SolveInput<'_>, opts: &SolveOptions) -> crate::Result<SolveOutput> {
    let poses = input.odometry;
    if poses.is_empty() {
        return Err(CliError::Dataset("odometry is empty".into()));
    }
    if let Some(d) = input.detections.iter().find(|d| d.frame >= poses.len()) {
        return Err(CliError::Dataset(format!("detection references missing frame {}", d.frame)));
    }
    let mut by_object: BTreeMap<u64, Vec<&Detection>> = BTreeMap::new();
    for d in input.detections {
        by_object.entry(d.object_id).or_default().push(d);
    }

    let mut excluded = Vec::new();
    let mut initial_landmarks = BTreeMap::new();
    let mut box_sigma = BTreeMap::new();
    for (id, dets) in &by_object {
        let (sw, sh) = bbox_size_std(dets);
        if let Some([w, h]) = opts.reject_bbox_std {
            if sw > w || sh > h {
                excluded.push(Exclusion {
                    id: *id,
                    reason: format!("bbox size std ({sw:.2}, {sh:.2}) px exceeds ({w}, {h})"),
                });
                continue;
            }
        }
        let obs = LandmarkObservations {
            landmark_id: *id,
            entries: dets.iter().map(|d| (d.frame, d.bbox)).collect(),
        };
        match initialize_landmark(&obs, poses, &input.intrinsics, &opts.init) {
            Ok(l) => {
                initial_landmarks.insert(*id, l.quadric);
                let sigma = match input.noise {
                    Some(n) => n.det_sigma_px.max(MIN_DET_SIGMA_PX),
                    None => (sw + sh).max(MIN_DET_SIGMA_PX),
                };
                box_sigma.insert(*id, sigma);
            }
            Err(e) => excluded.push(Exclusion {
                id: *id,
                reason: e.to_string(),
            }),
        }
    }

    let mut graph = FactorGraph::new(input.intrinsics, opts.error_mode);
    graph.poses = poses.to_vec();
    let ids: Vec<u64> = initial_landmarks.keys().copied().collect();
    graph.quadrics = ids.iter().map(|id| initial_landmarks[id]).collect();
    for (i, w) in poses.windows(2).enumerate() {
        let u = w[0].between(&w[1]);
        let sigma = match input.noise {
            Some(n) => n.odometry_covariance(&u),
            None => Matrix6::from_diagonal(&Vector6::repeat(REAL_DATA_ODOMETRY_SIGMA.powi(2))),
        };
        graph.odometry_factors.push(OdometryFactor::new(i, u, sigma).map_err(graph_error)?);
    }
    for (j, id) in ids.iter().enumerate() {
        let s = box_sigma[id];
        for d in &by_object[id] {
            let lambda = Matrix4::identity() * (s * s);
            graph
                .bbox_factors
                .push(BBoxFactor::new(d.frame, j, d.bbox, lambda).map_err(graph_error)?);
        }
    }

    let result = optimize(&graph, &opts.solver).map_err(graph_error)?;
    let landmarks = ids.iter().copied().zip(result.quadrics.iter().copied()).collect();
    Ok(SolveOutput {
        initial_landmarks,
        landmarks,
        poses: result.poses.clone(),
        excluded,
        result,
    })
}
