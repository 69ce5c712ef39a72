//! Trajectory and landmark error metrics and class-score fusion.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ConstrainedDualQuadric, SE3Pose};
use crate::simulator::SceneObject;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("trajectory lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no estimated landmark matches a ground-truth object")]
    NoMatchedLandmarks,
    #[error("no detections to fuse")]
    EmptyDetections,
    #[error("score vectors have inconsistent lengths")]
    InconsistentScores,
}

/// Axis-aligned box given by two corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Aabb {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Self {
        Self { min, max }
    }

    pub fn centroid(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    pub fn extents(&self) -> Vector3<f64> {
        (self.max - self.min).map(|v| v.max(0.0))
    }

    pub fn volume(&self) -> f64 {
        self.extents().product()
    }

    pub fn centered(&self) -> Self {
        let h = self.extents() * 0.5;
        Self::new(-h, h)
    }

    pub fn intersection_volume(&self, other: &Self) -> f64 {
        (0..3)
            .map(|k| (self.max[k].min(other.max[k]) - self.min[k].max(other.min[k])).max(0.0))
            .product()
    }
}

impl From<&SceneObject> for Aabb {
    fn from(o: &SceneObject) -> Self {
        Self::new(o.aabb_min, o.aabb_max)
    }
}

/// RMSE of translation differences after moving the estimate so that its
/// first pose coincides with the first true pose.
pub fn ate_trans(estimate: &[SE3Pose], truth: &[SE3Pose]) -> Result<f64, EvalError> {
    if estimate.len() != truth.len() {
        return Err(EvalError::LengthMismatch(estimate.len(), truth.len()));
    }
    let (Some(e0), Some(t0)) = (estimate.first(), truth.first()) else {
        return Ok(0.0);
    };
    let align = t0.compose(&e0.inverse());
    let sum: f64 = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (align.compose(e).translation() - t.translation()).norm_squared())
        .sum();
    Ok((sum / estimate.len() as f64).sqrt())
}

/// Tight world-frame box around the ellipsoid.
pub fn quadric_aabb(q: &ConstrainedDualQuadric) -> Aabb {
    let h = q.aabb_half_extents();
    Aabb::new(q.t - h, q.t + h)
}

fn jaccard_distance(a: &Aabb, b: &Aabb) -> f64 {
    let inter = a.intersection_volume(b);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 1.0;
    }
    (1.0 - inter / union).clamp(0.0, 1.0)
}

/// Jaccard distance between the two boxes after centring both at the origin.
pub fn centered_jaccard(a: &Aabb, b: &Aabb) -> f64 {
    jaccard_distance(&a.centered(), &b.centered())
}

/// Jaccard distance between the boxes in place.
pub fn quality_jaccard(a: &Aabb, b: &Aabb) -> f64 {
    jaccard_distance(a, b)
}

/// Per-landmark errors against the matching ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkError {
    pub object_id: u64,
    pub trans_error: f64,
    pub shape_jaccard: f64,
    pub quality_jaccard: f64,
    pub volume_ratio: f64,
}

/// Landmark metrics over objects with an estimate. Objects without one are
/// listed in `unmatched` and excluded from the averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkMetrics {
    pub lm_trans_rmse: f64,
    pub lm_shape_jaccard: f64,
    pub lm_quality_jaccard: f64,
    pub per_landmark: Vec<LandmarkError>,
    pub unmatched: Vec<u64>,
}

fn matched<'a>(
    estimated: &'a BTreeMap<u64, ConstrainedDualQuadric>,
    truth: &'a [SceneObject],
) -> (Vec<(&'a SceneObject, &'a ConstrainedDualQuadric)>, Vec<u64>) {
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for o in truth {
        match estimated.get(&o.id) {
            Some(q) => pairs.push((o, q)),
            None => unmatched.push(o.id),
        }
    }
    (pairs, unmatched)
}

/// RMSE between estimated quadric centres and true box centroids.
pub fn lm_trans_rmse(
    estimated: &BTreeMap<u64, ConstrainedDualQuadric>,
    truth: &[SceneObject],
) -> Result<f64, EvalError> {
    let (pairs, _) = matched(estimated, truth);
    if pairs.is_empty() {
        return Err(EvalError::NoMatchedLandmarks);
    }
    let sum: f64 = pairs.iter().map(|(o, q)| (q.t - o.centroid()).norm_squared()).sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

pub fn landmark_metrics(
    estimated: &BTreeMap<u64, ConstrainedDualQuadric>,
    truth: &[SceneObject],
) -> Result<LandmarkMetrics, EvalError> {
    let (pairs, unmatched) = matched(estimated, truth);
    if pairs.is_empty() {
        return Err(EvalError::NoMatchedLandmarks);
    }
    let per_landmark: Vec<LandmarkError> = pairs
        .iter()
        .map(|(o, q)| {
            let gt = Aabb::from(*o);
            let est = quadric_aabb(q);
            LandmarkError {
                object_id: o.id,
                trans_error: (q.t - o.centroid()).norm(),
                shape_jaccard: centered_jaccard(&est, &gt),
                quality_jaccard: quality_jaccard(&est, &gt),
                volume_ratio: q.volume() / o.ellipsoid().volume(),
            }
        })
        .collect();
    let n = per_landmark.len() as f64;
    let mean = |f: fn(&LandmarkError) -> f64| per_landmark.iter().map(f).sum::<f64>() / n;
    Ok(LandmarkMetrics {
        lm_trans_rmse: mean(|l| l.trans_error * l.trans_error).sqrt(),
        lm_shape_jaccard: mean(|l| l.shape_jaccard),
        lm_quality_jaccard: mean(|l| l.quality_jaccard),
        per_landmark,
        unmatched,
    })
}

/// Mean score distribution and its most likely class (lowest index on ties).
pub fn fuse_class_scores(scores: &[Vec<f64>]) -> Result<(usize, Vec<f64>), EvalError> {
    let first = scores.first().ok_or(EvalError::EmptyDetections)?;
    let n = first.len();
    if n == 0 || scores.iter().any(|s| s.len() != n) {
        return Err(EvalError::InconsistentScores);
    }
    // sort each column so the sum does not depend on detection order
    let fused: Vec<f64> = (0..n)
        .map(|c| {
            let mut col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
            col.sort_by(f64::total_cmp);
            col.iter().sum::<f64>() / scores.len() as f64
        })
        .collect();
    let label = fused
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v > fused[best] { i } else { best });
    Ok((label, fused))
}

/// Metrics for one estimate of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial: String,
    pub method: String,
    pub ate_trans: f64,
    pub lm_trans_rmse: f64,
    pub lm_shape_jaccard: f64,
    pub lm_quality_jaccard: f64,
    pub landmarks: Vec<LandmarkError>,
    pub unmatched: Vec<u64>,
    pub iterations: usize,
    pub converged: bool,
    pub final_cost: f64,
}

impl TrialReport {
    pub const CSV_HEADER: [&'static str; 9] = [
        "trial",
        "method",
        "ate_trans",
        "lm_trans",
        "lm_shape",
        "lm_quality",
        "iterations",
        "converged",
        "final_cost",
    ];

    pub fn new(
        trial: impl Into<String>,
        method: impl Into<String>,
        estimate: &[SE3Pose],
        truth: &[SE3Pose],
        landmarks: &BTreeMap<u64, ConstrainedDualQuadric>,
        objects: &[SceneObject],
    ) -> Result<Self, EvalError> {
        let ate = ate_trans(estimate, truth)?;
        let lm = landmark_metrics(landmarks, objects)?;
        Ok(Self {
            trial: trial.into(),
            method: method.into(),
            ate_trans: ate,
            lm_trans_rmse: lm.lm_trans_rmse,
            lm_shape_jaccard: lm.lm_shape_jaccard,
            lm_quality_jaccard: lm.lm_quality_jaccard,
            landmarks: lm.per_landmark,
            unmatched: lm.unmatched,
            iterations: 0,
            converged: true,
            final_cost: 0.0,
        })
    }

    pub fn with_solver_stats(mut self, iterations: usize, converged: bool, final_cost: f64) -> Self {
        self.iterations = iterations;
        self.converged = converged;
        self.final_cost = final_cost;
        self
    }

    pub fn csv_record(&self) -> [String; 9] {
        [
            self.trial.clone(),
            self.method.clone(),
            self.ate_trans.to_string(),
            self.lm_trans_rmse.to_string(),
            self.lm_shape_jaccard.to_string(),
            self.lm_quality_jaccard.to_string(),
            self.iterations.to_string(),
            self.converged.to_string(),
            self.final_cost.to_string(),
        ]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report is always serializable")
    }

    pub fn mean_volume_ratio(&self) -> f64 {
        if self.landmarks.is_empty() {
            return f64::NAN;
        }
        self.landmarks.iter().map(|l| l.volume_ratio).sum::<f64>() / self.landmarks.len() as f64
    }
}

/// The four headline metrics averaged over a set of reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub ate_trans: f64,
    pub lm_trans: f64,
    pub lm_shape: f64,
    pub lm_quality: f64,
    pub count: usize,
}

impl MetricSummary {
    pub fn mean<'a>(reports: impl IntoIterator<Item = &'a TrialReport>) -> Self {
        let mut s = Self {
            ate_trans: 0.0,
            lm_trans: 0.0,
            lm_shape: 0.0,
            lm_quality: 0.0,
            count: 0,
        };
        for r in reports {
            s.ate_trans += r.ate_trans;
            s.lm_trans += r.lm_trans_rmse;
            s.lm_shape += r.lm_shape_jaccard;
            s.lm_quality += r.lm_quality_jaccard;
            s.count += 1;
        }
        if s.count > 0 {
            let n = s.count as f64;
            s.ate_trans /= n;
            s.lm_trans /= n;
            s.lm_shape /= n;
            s.lm_quality /= n;
        }
        s
    }

    /// Mean of per-group means, e.g. grouping trials by scene.
    pub fn mean_of_groups(groups: &[Vec<&TrialReport>]) -> Self {
        let means: Vec<Self> = groups
            .iter()
            .filter(|g| !g.is_empty())
            .map(|g| Self::mean(g.iter().copied()))
            .collect();
        let n = means.len().max(1) as f64;
        Self {
            ate_trans: means.iter().map(|m| m.ate_trans).sum::<f64>() / n,
            lm_trans: means.iter().map(|m| m.lm_trans).sum::<f64>() / n,
            lm_shape: means.iter().map(|m| m.lm_shape).sum::<f64>() / n,
            lm_quality: means.iter().map(|m| m.lm_quality).sum::<f64>() / n,
            count: means.iter().map(|m| m.count).sum(),
        }
    }

    /// Relative reduction of each metric from `baseline` to `self`.
    pub fn improvement_over(&self, baseline: &Self) -> [f64; 4] {
        let rel = |b: f64, a: f64| if b > 0.0 { (b - a) / b } else { 0.0 };
        [
            rel(baseline.ate_trans, self.ate_trans),
            rel(baseline.lm_trans, self.lm_trans),
            rel(baseline.lm_shape, self.lm_shape),
            rel(baseline.lm_quality, self.lm_quality),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Vector6;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube(min: [f64; 3], max: [f64; 3]) -> Aabb {
        Aabb::new(Vector3::from(min), Vector3::from(max))
    }

    fn object(id: u64, min: [f64; 3], max: [f64; 3]) -> SceneObject {
        SceneObject {
            id,
            class_label: "box".into(),
            aabb_min: Vector3::from(min),
            aabb_max: Vector3::from(max),
        }
    }

    #[test]
    fn ate_identical_is_zero() {
        let t: Vec<SE3Pose> = (0..5)
            .map(|i| SE3Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)))
            .collect();
        assert_eq!(ate_trans(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn ate_constant_offset() {
        let truth: Vec<SE3Pose> = (0..5)
            .map(|i| SE3Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)))
            .collect();
        let est: Vec<SE3Pose> = truth
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let off = if i == 0 { 0.0 } else { 1.0 };
                SE3Pose::from_translation(p.translation() + Vector3::new(0.0, off, 0.0))
            })
            .collect();
        assert_relative_eq!(ate_trans(&est, &truth).unwrap(), (4.0f64 / 5.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn ate_length_mismatch() {
        let t = vec![SE3Pose::identity(); 3];
        assert_eq!(ate_trans(&t[..2], &t), Err(EvalError::LengthMismatch(2, 3)));
    }

    #[test]
    fn aabb_of_axis_aligned_quadric() {
        let q = ConstrainedDualQuadric::axis_aligned(Vector3::zeros(), Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let b = quadric_aabb(&q);
        assert_eq!(b.min, Vector3::new(-1.0, -2.0, -3.0));
        assert_eq!(b.max, Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn aabb_of_rotated_sphere() {
        let q = ConstrainedDualQuadric::new(Vector3::new(0.3, -1.1, 0.7), Vector3::zeros(), Vector3::repeat(1.0)).unwrap();
        let b = quadric_aabb(&q);
        assert_relative_eq!(b.min, Vector3::repeat(-1.0), epsilon = 1e-12);
        assert_relative_eq!(b.max, Vector3::repeat(1.0), epsilon = 1e-12);
    }

    #[test]
    fn aabb_matches_sampled_hull() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let theta = Vector3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let t = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            let s = Vector3::from_fn(|_, _| rng.random_range(0.2..2.0));
            let q = ConstrainedDualQuadric::new(theta, t, s).unwrap();
            let r = q.rotation();
            let mut lo = Vector3::repeat(f64::INFINITY);
            let mut hi = Vector3::repeat(f64::NEG_INFINITY);
            for _ in 0..100_000 {
                // uniform direction on the unit sphere mapped onto the surface
                let z: f64 = rng.random_range(-1.0..1.0);
                let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let rho = (1.0 - z * z).sqrt();
                let u = Vector3::new(rho * phi.cos(), rho * phi.sin(), z);
                let p = t + r * s.component_mul(&u);
                lo = lo.inf(&p);
                hi = hi.sup(&p);
            }
            let b = quadric_aabb(&q);
            assert!((b.min - lo).amax() < 1e-3 * s.max().max(1.0) * 5.0);
            assert!((b.max - hi).amax() < 1e-3 * s.max().max(1.0) * 5.0);
            assert!((0..3).all(|k| b.min[k] <= lo[k] + 1e-12 && b.max[k] >= hi[k] - 1e-12));
        }
    }

    #[test]
    fn jaccard_closed_forms() {
        let unit = cube([0.0; 3], [1.0; 3]);
        let half = cube([5.0, 5.0, 5.0], [6.0, 6.0, 5.5]);
        assert!((centered_jaccard(&unit, &half) - 0.5).abs() < 1e-12);
        let shifted = cube([0.5, 0.0, 0.0], [1.5, 1.0, 1.0]);
        assert!((quality_jaccard(&unit, &shifted) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(quality_jaccard(&unit, &unit), 0.0);
        assert_eq!(quality_jaccard(&unit, &cube([3.0; 3], [4.0; 3])), 1.0);
        assert_eq!(centered_jaccard(&unit, &cube([7.0; 3], [8.0; 3])), 0.0);
        let flat = cube([0.0; 3], [1.0, 1.0, 0.0]);
        assert_eq!(centered_jaccard(&flat, &flat), 1.0);
    }

    #[test]
    fn lm_trans_pythagorean() {
        let objs = [object(0, [-1.0; 3], [1.0; 3])];
        let mut est = BTreeMap::new();
        est.insert(0, ConstrainedDualQuadric::axis_aligned(Vector3::new(3.0, 4.0, 0.0), Vector3::repeat(1.0)).unwrap());
        assert!((lm_trans_rmse(&est, &objs).unwrap() - 5.0).abs() < 1e-12);
        est.insert(0, objs[0].ellipsoid());
        assert_eq!(lm_trans_rmse(&est, &objs).unwrap(), 0.0);
    }

    #[test]
    fn unmatched_objects_are_reported() {
        let objs = [object(0, [-1.0; 3], [1.0; 3]), object(7, [2.0; 3], [3.0; 3])];
        let mut est = BTreeMap::new();
        est.insert(0, objs[0].ellipsoid());
        let m = landmark_metrics(&est, &objs).unwrap();
        assert_eq!(m.unmatched, vec![7]);
        assert_eq!(m.lm_trans_rmse, 0.0);
        assert!(matches!(lm_trans_rmse(&BTreeMap::new(), &objs), Err(EvalError::NoMatchedLandmarks)));
    }

    #[test]
    fn fuse_scores_examples() {
        assert_eq!(fuse_class_scores(&[vec![0.1, 0.7, 0.2]]).unwrap().0, 1);
        let (label, fused) = fuse_class_scores(&[vec![0.6, 0.4], vec![0.2, 0.8]]).unwrap();
        assert_eq!(label, 1);
        assert!((fused[0] - 0.4).abs() < 1e-12 && (fused[1] - 0.6).abs() < 1e-12);
        assert_eq!(fuse_class_scores(&[vec![0.5, 0.5]]).unwrap().0, 0);
        assert_eq!(fuse_class_scores(&[]), Err(EvalError::EmptyDetections));
    }

    #[test]
    fn report_csv_and_json() {
        let objs = [object(0, [-1.0; 3], [1.0; 3])];
        let mut est = BTreeMap::new();
        est.insert(0, objs[0].ellipsoid());
        let traj = vec![SE3Pose::identity(); 3];
        let r = TrialReport::new("s0", "quadricslam", &traj, &traj, &est, &objs).unwrap();
        assert_eq!(r.csv_record()[2..6], ["0", "0", "0", "0"].map(String::from));
        let back: TrialReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_relative_eq!(r.mean_volume_ratio(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn summary_aggregations() {
        let mk = |ate: f64| TrialReport {
            trial: String::new(),
            method: String::new(),
            ate_trans: ate,
            lm_trans_rmse: 0.0,
            lm_shape_jaccard: 0.0,
            lm_quality_jaccard: 0.0,
            landmarks: vec![],
            unmatched: vec![],
            iterations: 0,
            converged: true,
            final_cost: 0.0,
        };
        let (a, b, c) = (mk(1.0), mk(2.0), mk(6.0));
        assert_relative_eq!(MetricSummary::mean([&a, &b, &c]).ate_trans, 3.0);
        let grouped = MetricSummary::mean_of_groups(&[vec![&a, &b], vec![&c]]);
        assert_relative_eq!(grouped.ate_trans, 3.75);
        let imp = MetricSummary::mean([&a]).improvement_over(&MetricSummary::mean([&b]));
        assert_relative_eq!(imp[0], 0.5);
    }

    fn arb_box() -> impl Strategy<Value = Aabb> {
        (prop::array::uniform3(-3.0..3.0f64), prop::array::uniform3(0.0..2.0f64))
            .prop_map(|(m, e)| cube(m, [m[0] + e[0], m[1] + e[1], m[2] + e[2]]))
    }

    fn arb_pose() -> impl Strategy<Value = SE3Pose> {
        prop::array::uniform6(-2.0..2.0f64).prop_map(|v| SE3Pose::exp(&Vector6::from(v)))
    }

    proptest! {
        #[test]
        fn jaccard_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            for f in [centered_jaccard, quality_jaccard] {
                let d = f(&a, &b);
                prop_assert!((0.0..=1.0).contains(&d));
                prop_assert!((d - f(&b, &a)).abs() < 1e-12);
            }
        }

        #[test]
        fn ate_invariant_to_common_rigid_motion(
            g in arb_pose(),
            est in prop::collection::vec(arb_pose(), 4),
            truth in prop::collection::vec(arb_pose(), 4),
        ) {
            let moved = |v: &[SE3Pose]| v.iter().map(|p| g.compose(p)).collect::<Vec<_>>();
            let a = ate_trans(&est, &truth).unwrap();
            let b = ate_trans(&moved(&est), &moved(&truth)).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn fused_scores_sum_to_one_and_ignore_order(
            raw in prop::collection::vec(prop::collection::vec(0.01..1.0f64, 4), 1..8)
        ) {
            let scores: Vec<Vec<f64>> = raw
                .iter()
                .map(|s| { let t: f64 = s.iter().sum(); s.iter().map(|v| v / t).collect() })
                .collect();
            let (label, fused) = fuse_class_scores(&scores).unwrap();
            prop_assert!((fused.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mut rev = scores.clone();
            rev.reverse();
            prop_assert_eq!(fuse_class_scores(&rev).unwrap(), (label, fused));
        }
    }
}
