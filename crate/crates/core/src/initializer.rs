//! Linear initialization of quadric landmarks from multi-view detections.
//!
//! Every box side back-projects to a plane tangent to the object. Each plane
//! gives one linear equation `πᵀQ*π = 0` in the ten entries of the dual
//! quadric; the stacked system is solved by SVD and the result is projected
//! onto the ellipsoid parametrization.

use nalgebra::{DMatrix, Matrix3, RowDVector, Matrix4, Rotation3, SVector, SymmetricEigen, Vector3};
use thiserror::Error;

use crate::geometry::{
    back_project_line, predict_bbox, BoundingBox, CameraIntrinsics, ConstrainedDualQuadric, GeneralDualQuadric,
    Plane, SE3Pose,
};
use crate::tolerances::Tolerances;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InitError {
    #[error("landmark {landmark_id}: {rows} plane equations, at least {needed} required")]
    InsufficientObservations {
        landmark_id: u64,
        rows: usize,
        needed: usize,
    },
    #[error("observation references pose {0} which does not exist")]
    PoseOutOfRange(usize),
    #[error("quadric surface is not an ellipsoid")]
    NotEllipsoidal,
    #[error("quadric has a zero-length semi-axis")]
    ZeroScale,
    #[error("landmark {0} initialized behind every observing camera")]
    BehindAllCameras(u64),
}

/// Coefficients of `πᵀQ*π` as a linear function of the 10-vector `q̂`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneRow {
    pub row: SVector<f64, 10>,
}

/// Expansion of `πᵀQ*π` for symmetric `Q*`, ordered like [`GeneralDualQuadric`].
pub fn plane_row(pi: &Plane) -> PlaneRow {
    let [a, b, c, d] = [pi.0[0], pi.0[1], pi.0[2], pi.0[3]];
    PlaneRow {
        row: SVector::<f64, 10>::from_column_slice(&[
            a * a,
            2.0 * a * b,
            2.0 * a * c,
            2.0 * a * d,
            b * b,
            2.0 * b * c,
            2.0 * b * d,
            c * c,
            2.0 * c * d,
            d * d,
        ]),
    }
}

/// All detections of one landmark.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkObservations {
    pub landmark_id: u64,
    pub entries: Vec<(usize, BoundingBox)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitConfig {
    /// Fewest detections a landmark needs before it is initialized.
    pub min_detections: usize,
    /// Keep landmarks whose centroid lands behind every observing camera.
    pub keep_behind_camera: bool,
    /// Use only detections clear of the image border when at least
    /// `min_detections` of them exist. Sides of a truncated box are generally
    /// not tangent to the object.
    pub skip_truncated: bool,
    /// A box within this many pixels of the image border counts as truncated.
    pub truncation_margin_px: f64,
    /// When all detections together do not yield an ellipsoid, retry on runs
    /// of consecutive detections, whose poses have drifted less relative to
    /// each other.
    pub window_fallback: bool,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            min_detections: 3,
            keep_behind_camera: false,
            skip_truncated: true,
            truncation_margin_px: 5.0,
            window_fallback: true,
        }
    }
}

/// Stacks one unit-normalized row per box side into `A` (4 rows per detection).
pub fn assemble_system(
    obs: &LandmarkObservations,
    poses: &[SE3Pose],
    k: &CameraIntrinsics,
) -> Result<DMatrix<f64>, InitError> {
    let mut rows: Vec<RowDVector<f64>> = Vec::with_capacity(4 * obs.entries.len());
    for (pose_index, b) in &obs.entries {
        let pose = poses
            .get(*pose_index)
            .ok_or(InitError::PoseOutOfRange(*pose_index))?;
        let p = k.projection_matrix(pose);
        for line in b.lines().iter() {
            let pi = back_project_line(&p, line).normalized();
            let row = plane_row(&pi).row;
            let norm = row.norm();
            let row = if norm > 0.0 { row / norm } else { row };
            rows.push(RowDVector::from_iterator(10, row.iter().copied()));
        }
    }
    if rows.len() < 10 {
        return Err(InitError::InsufficientObservations {
            landmark_id: obs.landmark_id,
            rows: rows.len(),
            needed: 10,
        });
    }
    Ok(DMatrix::from_rows(&rows))
}

/// Unit vector minimizing `‖A q̂‖`, with the two smallest singular values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullSpaceSolution {
    pub quadric: GeneralDualQuadric,
    pub smallest_singular_value: f64,
    pub second_singular_value: f64,
    /// The two smallest singular values coincide, so the minimizer is not unique.
    pub rank_deficient: bool,
}

pub fn svd_min_solution(a: &DMatrix<f64>) -> NullSpaceSolution {
    // Square up through AᵀA's row space only if A is short; otherwise SVD A directly.
    let a = if a.nrows() < a.ncols() {
        let mut padded = DMatrix::zeros(a.ncols(), a.ncols());
        padded.view_mut((0, 0), (a.nrows(), a.ncols())).copy_from(a);
        padded
    } else {
        a.clone()
    };
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let min = order[0];
    let qhat = SVector::<f64, 10>::from_iterator(v_t.row(min).iter().copied()).normalize();
    let smallest = svd.singular_values[min];
    let second = svd.singular_values[order[1]];
    NullSpaceSolution {
        quadric: GeneralDualQuadric { qhat },
        smallest_singular_value: smallest,
        second_singular_value: second,
        rank_deficient: (second - smallest).abs() <= Tolerances::DEFAULT.singular_gap,
    }
}

/// Projects a general dual quadric onto the ellipsoid parametrization.
///
/// Semi-axes come from the primal quadric `Q = (Q*)⁻¹`:
/// `sᵢ = |√(−det Q / det Q₃₃ · λᵢ⁻¹)|` with `λᵢ` the eigenvalues of the
/// upper-left block `Q₃₃`, whose eigenvectors give the rotation. Axes are
/// sorted by decreasing length.
pub fn extract_constrained(qhat: &GeneralDualQuadric) -> Result<ConstrainedDualQuadric, InitError> {
    let mut dual = qhat.matrix();
    let q44 = dual[(3, 3)];
    if q44 == 0.0 || !q44.is_finite() {
        return Err(InitError::NotEllipsoidal);
    }
    if q44 > 0.0 {
        dual = -dual;
    }
    let t = Vector3::new(dual[(0, 3)], dual[(1, 3)], dual[(2, 3)]) / dual[(3, 3)];

    // Move the centre to the origin first; Q₃₃ and det Q are unchanged by
    // translation but the centred matrices are far better conditioned.
    let mut shift = Matrix4::identity();
    shift.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-t));
    let dual = shift * dual * shift.transpose();
    let dual = (dual + dual.transpose()) / (2.0 * dual.norm());
    let primal = dual.try_inverse().ok_or(InitError::NotEllipsoidal)?;
    let q33: Matrix3<f64> = primal.fixed_view::<3, 3>(0, 0).into_owned();
    let q33 = (q33 + q33.transpose()) * 0.5;
    let eig = SymmetricEigen::new(q33);
    let lambdas = eig.eigenvalues;
    let scale = lambdas.abs().max();
    if scale.is_nan() || scale <= 0.0 || lambdas.iter().any(|l| l.abs() <= scale * 1e-15) {
        return Err(InitError::ZeroScale);
    }
    let positive = lambdas.iter().filter(|l| **l > 0.0).count();
    if positive != 0 && positive != 3 {
        return Err(InitError::NotEllipsoidal);
    }
    let ratio = -primal.determinant() / q33.determinant();
    let axes = lambdas.map(|l| (ratio / l).abs().sqrt());
    if axes.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(InitError::ZeroScale);
    }

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| axes[j].total_cmp(&axes[i]));
    let s = Vector3::new(axes[order[0]], axes[order[1]], axes[order[2]]);
    let mut r = Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    if r.determinant() < 0.0 {
        r.set_column(2, &(-r.column(2)));
    }
    let rotation = Rotation3::from_matrix_unchecked(r);
    ConstrainedDualQuadric::from_rotation(&rotation, t, s).map_err(|_| InitError::ZeroScale)
}

/// Result of initializing one landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitializedLandmark {
    pub quadric: ConstrainedDualQuadric,
    /// Centroid lies behind every camera that observed it.
    pub behind_all_cameras: bool,
    pub rank_deficient: bool,
}

/// Shortest run of detections tried by the window fallback.
pub const MIN_WINDOW: usize = 6;

/// Assemble, solve and constrain in one step.
pub fn initialize_landmark(
    obs: &LandmarkObservations,
    poses: &[SE3Pose],
    k: &CameraIntrinsics,
    cfg: &InitConfig,
) -> Result<InitializedLandmark, InitError> {
    if obs.entries.len() < cfg.min_detections {
        return Err(InitError::InsufficientObservations {
            landmark_id: obs.landmark_id,
            rows: 4 * obs.entries.len(),
            needed: 4 * cfg.min_detections.max(3),
        });
    }
    match initialize_entries(obs.landmark_id, &obs.entries, poses, k, cfg) {
        Err(e @ (InitError::NotEllipsoidal | InitError::ZeroScale | InitError::BehindAllCameras(_)))
            if cfg.window_fallback =>
        {
            initialize_windowed(obs, poses, k, cfg).ok_or(e)
        }
        r => r,
    }
}

fn initialize_entries(
    landmark_id: u64,
    entries: &[(usize, BoundingBox)],
    poses: &[SE3Pose],
    k: &CameraIntrinsics,
    cfg: &InitConfig,
) -> Result<InitializedLandmark, InitError> {
    let tol = cfg.truncation_margin_px.max(Tolerances::DEFAULT.image_bounds_slack);
    let clear: Vec<(usize, BoundingBox)> = entries
        .iter()
        .filter(|(_, b)| !b.touches_border(k, tol))
        .copied()
        .collect();
    let used = if cfg.skip_truncated && clear.len() >= cfg.min_detections.max(3) {
        clear
    } else {
        entries.to_vec()
    };
    let a = assemble_system(
        &LandmarkObservations {
            landmark_id,
            entries: used,
        },
        poses,
        k,
    )?;
    let solution = svd_min_solution(&a);
    let quadric = extract_constrained(&solution.quadric)?;
    let behind_all_cameras = entries.iter().all(|(i, _)| {
        poses[*i].inverse().transform_point(&quadric.t).z <= Tolerances::DEFAULT.min_depth
    });
    if behind_all_cameras && !cfg.keep_behind_camera {
        return Err(InitError::BehindAllCameras(landmark_id));
    }
    Ok(InitializedLandmark {
        quadric,
        behind_all_cameras,
        rank_deficient: solution.rank_deficient,
    })
}

/// Mean distance between detected and predicted boxes.
fn box_fit(entries: &[(usize, BoundingBox)], poses: &[SE3Pose], k: &CameraIntrinsics, q: &ConstrainedDualQuadric) -> f64 {
    let total: f64 = entries
        .iter()
        .map(|(i, b)| match predict_bbox(&poses[*i], k, q) {
            Ok(p) => (p.to_vector() - b.to_vector()).norm(),
            Err(_) => f64::INFINITY,
        })
        .sum();
    total / entries.len() as f64
}

/// Runs of consecutive detections, halving the run length from half the
/// detections down to [`MIN_WINDOW`]. The first length at which any run
/// yields an ellipsoid wins; among its runs the best box fit is kept.
fn initialize_windowed(
    obs: &LandmarkObservations,
    poses: &[SE3Pose],
    k: &CameraIntrinsics,
    cfg: &InitConfig,
) -> Option<InitializedLandmark> {
    let mut entries = obs.entries.clone();
    entries.sort_by_key(|e| e.0);
    let n = entries.len();
    let min_len = MIN_WINDOW.max(cfg.min_detections);
    let mut len = n / 2;
    while len >= min_len {
        let stride = (len / 2).max(1);
        let best = (0..=n - len)
            .step_by(stride)
            .filter_map(|start| {
                let window = &entries[start..start + len];
                let l = initialize_entries(obs.landmark_id, window, poses, k, cfg).ok()?;
                Some((box_fit(window, poses, k, &l.quadric), l))
            })
            .filter(|(fit, _)| fit.is_finite())
            .min_by(|a, b| a.0.total_cmp(&b.0));
        if let Some((_, l)) = best {
            return Some(l);
        }
        if len == min_len {
            break;
        }
        len = (len / 2).max(min_len);
    }
    None
}
