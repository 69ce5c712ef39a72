//! Per-trial metrics, the aggregate error table and trajectory plots.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use qslam_core::evaluation::{ate_trans, landmark_metrics, quadric_aabb, LandmarkMetrics, MetricSummary, TrialReport};
use qslam_core::simulator::SceneObject;
use qslam_core::{ConstrainedDualQuadric, SE3Pose};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    read_json, read_landmarks, read_trajectory, trial_name, TrialData, ESTIMATE_TRAJECTORY_FILE,
    INITIAL_LANDMARKS_FILE, LANDMARKS_FILE,
};
use crate::{CliError, Result};

pub const SOLVE_SUMMARY_FILE: &str = "solve_summary.json";

/// Solver statistics written next to the estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub error_mode: String,
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub skipped_factors: usize,
    pub landmarks: usize,
    pub excluded: usize,
}

/// The three rows of the error table, in table order.
pub const METHODS: [&str; 3] = ["Odometry", "SVD solution", "QuadricSLAM"];

/// One method's metrics on one trial; `None` where a metric does not apply.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub trial: String,
    pub scene: String,
    pub method: &'static str,
    pub ate_trans: Option<f64>,
    pub lm_trans: Option<f64>,
    pub lm_shape: Option<f64>,
    pub lm_quality: Option<f64>,
    pub landmarks: usize,
    pub unmatched: usize,
    pub iterations: Option<usize>,
    pub converged: Option<bool>,
    pub final_cost: Option<f64>,
}

impl MethodRow {
    pub const CSV_HEADER: [&'static str; 12] = [
        "trial",
        "scene",
        "method",
        "ate_trans",
        "lm_trans",
        "lm_shape",
        "lm_quality",
        "landmarks",
        "unmatched",
        "iterations",
        "converged",
        "final_cost",
    ];

    fn new(trial: &str, scene: &str, method: &'static str) -> Self {
        Self {
            trial: trial.into(),
            scene: scene.into(),
            method,
            ate_trans: None,
            lm_trans: None,
            lm_shape: None,
            lm_quality: None,
            landmarks: 0,
            unmatched: 0,
            iterations: None,
            converged: None,
            final_cost: None,
        }
    }

    fn with_landmarks(mut self, m: Option<&LandmarkMetrics>, total: usize) -> Self {
        if let Some(m) = m {
            self.lm_trans = Some(m.lm_trans_rmse);
            self.lm_shape = Some(m.lm_shape_jaccard);
            self.lm_quality = Some(m.lm_quality_jaccard);
            self.landmarks = m.per_landmark.len();
            self.unmatched = m.unmatched.len();
        } else {
            self.unmatched = total;
        }
        self
    }

    pub fn csv_record(&self) -> Vec<String> {
        fn opt<T: ToString>(v: &Option<T>) -> String {
            v.as_ref().map(T::to_string).unwrap_or_default()
        }
        vec![
            self.trial.clone(),
            self.scene.clone(),
            self.method.to_string(),
            opt(&self.ate_trans),
            opt(&self.lm_trans),
            opt(&self.lm_shape),
            opt(&self.lm_quality),
            self.landmarks.to_string(),
            self.unmatched.to_string(),
            opt(&self.iterations),
            opt(&self.converged),
            opt(&self.final_cost),
        ]
    }
}

/// Everything computed for one trial.
#[derive(Debug, Clone)]
pub struct TrialEvaluation {
    pub rows: [MethodRow; 3],
    /// Full report for the optimized estimate, when any landmark matched.
    pub report: Option<TrialReport>,
    pub svg: String,
}

fn landmark_map(path: &Path) -> Result<BTreeMap<u64, ConstrainedDualQuadric>> {
    read_landmarks(path)?
        .landmarks
        .iter()
        .map(|l| Ok((l.id, l.to_quadric()?)))
        .collect()
}

pub fn evaluate_trial(root: &Path, dir: &Path, estimates: &str) -> Result<TrialEvaluation> {
    let data = TrialData::load(dir)?;
    let name = trial_name(root, dir);
    let truth = data
        .ground_truth
        .as_ref()
        .ok_or_else(|| CliError::Dataset(format!("{name}: no ground-truth trajectory")))?;
    let objects = data.scene.scene_objects()?;
    let est_dir = dir.join(estimates);
    let estimate = read_trajectory(&est_dir.join(ESTIMATE_TRAJECTORY_FILE))?;
    let initial = landmark_map(&est_dir.join(INITIAL_LANDMARKS_FILE))?;
    let optimized = landmark_map(&est_dir.join(LANDMARKS_FILE))?;
    let summary: SolveSummary = read_json(&est_dir.join(SOLVE_SUMMARY_FILE))?;
    let scene = match data.meta {
        Some(m) => format!("scene_{:02}", m.scene),
        None => dir
            .parent()
            .and_then(|p| p.file_name())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };

    let mismatch = |e: qslam_core::evaluation::EvalError| CliError::Dataset(format!("{name}: {e}"));
    let mut odo = MethodRow::new(&name, &scene, METHODS[0]);
    odo.ate_trans = Some(ate_trans(&data.odometry, truth).map_err(mismatch)?);

    let svd_metrics = landmark_metrics(&initial, &objects).ok();
    let svd = MethodRow::new(&name, &scene, METHODS[1]).with_landmarks(svd_metrics.as_ref(), objects.len());

    let est_metrics = landmark_metrics(&optimized, &objects).ok();
    let mut est = MethodRow::new(&name, &scene, METHODS[2]).with_landmarks(est_metrics.as_ref(), objects.len());
    est.ate_trans = Some(ate_trans(&estimate, truth).map_err(mismatch)?);
    est.iterations = Some(summary.iterations);
    est.converged = Some(summary.converged);
    est.final_cost = Some(summary.final_cost);

    let report = match est_metrics {
        Some(_) => Some(
            TrialReport::new(name.clone(), METHODS[2], &estimate, truth, &optimized, &objects)
                .map_err(mismatch)?
                .with_solver_stats(summary.iterations, summary.converged, summary.final_cost),
        ),
        None => None,
    };
    let svg = trajectory_svg(truth, &data.odometry, &estimate, &objects, &optimized);
    Ok(TrialEvaluation {
        rows: [odo, svd, est],
        report,
        svg,
    })
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Aggregated metrics of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub method: &'static str,
    /// `"trials"` (mean over trials) or `"scenes"` (mean of per-scene means).
    pub aggregation: &'static str,
    pub ate_trans: Option<f64>,
    pub lm_trans: Option<f64>,
    pub lm_shape: Option<f64>,
    pub lm_quality: Option<f64>,
    pub trials: usize,
}

impl AggregateRow {
    pub const CSV_HEADER: [&'static str; 7] =
        ["method", "aggregation", "ATE_trans", "LM_trans", "LM_shape", "LM_quality", "trials"];

    pub fn csv_record(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "-".into());
        vec![
            self.method.into(),
            self.aggregation.into(),
            f(self.ate_trans),
            f(self.lm_trans),
            f(self.lm_shape),
            f(self.lm_quality),
            self.trials.to_string(),
        ]
    }

    pub fn as_summary(&self) -> MetricSummary {
        MetricSummary {
            ate_trans: self.ate_trans.unwrap_or(f64::NAN),
            lm_trans: self.lm_trans.unwrap_or(f64::NAN),
            lm_shape: self.lm_shape.unwrap_or(f64::NAN),
            lm_quality: self.lm_quality.unwrap_or(f64::NAN),
            count: self.trials,
        }
    }
}

fn aggregate_rows(rows: &[&MethodRow], method: &'static str, aggregation: &'static str) -> AggregateRow {
    AggregateRow {
        method,
        aggregation,
        ate_trans: mean(rows.iter().map(|r| r.ate_trans)),
        lm_trans: mean(rows.iter().map(|r| r.lm_trans)),
        lm_shape: mean(rows.iter().map(|r| r.lm_shape)),
        lm_quality: mean(rows.iter().map(|r| r.lm_quality)),
        trials: rows.len(),
    }
}

/// Table rows for both aggregations, each in table order.
pub fn aggregate(evals: &[TrialEvaluation]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for (k, method) in METHODS.iter().enumerate() {
        let rows: Vec<&MethodRow> = evals.iter().map(|e| &e.rows[k]).collect();
        out.push(aggregate_rows(&rows, method, "trials"));
    }
    for (k, method) in METHODS.iter().enumerate() {
        let mut by_scene: BTreeMap<&str, Vec<&MethodRow>> = BTreeMap::new();
        for e in evals {
            by_scene.entry(e.rows[k].scene.as_str()).or_default().push(&e.rows[k]);
        }
        let means: Vec<AggregateRow> = by_scene.values().map(|r| aggregate_rows(r, method, "scenes")).collect();
        let refs: Vec<MethodRow> = means
            .iter()
            .map(|m| MethodRow {
                ate_trans: m.ate_trans,
                lm_trans: m.lm_trans,
                lm_shape: m.lm_shape,
                lm_quality: m.lm_quality,
                ..MethodRow::new("", "", method)
            })
            .collect();
        let mut row = aggregate_rows(&refs.iter().collect::<Vec<_>>(), method, "scenes");
        row.trials = evals.len();
        out.push(row);
    }
    out
}

pub fn csv_bytes(header: &[&str], records: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in records {
        w.write_record(&r).expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

/// Plain-text rendering of the mean-over-trials table.
pub fn format_table(rows: &[AggregateRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<14}{:>12}{:>12}{:>12}{:>12}", "", "ATE_trans", "LM_trans", "LM_shape", "LM_quality");
    for r in rows.iter().filter(|r| r.aggregation == "trials") {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<14}{:>12}{:>12}{:>12}{:>12}",
            r.method,
            f(r.ate_trans),
            f(r.lm_trans),
            f(r.lm_shape),
            f(r.lm_quality)
        );
    }
    s
}

/// Top-down view: truth green, odometry red, estimate blue.
pub fn trajectory_svg(
    truth: &[SE3Pose],
    odometry: &[SE3Pose],
    estimate: &[SE3Pose],
    objects: &[SceneObject],
    landmarks: &BTreeMap<u64, ConstrainedDualQuadric>,
) -> String {
    const SIZE: f64 = 800.0;
    const MARGIN: f64 = 40.0;
    let xy = |p: &SE3Pose| (p.translation().x, p.translation().y);
    let mut pts: Vec<(f64, f64)> = truth.iter().chain(odometry).chain(estimate).map(xy).collect();
    for o in objects {
        pts.push((o.aabb_min.x, o.aabb_min.y));
        pts.push((o.aabb_max.x, o.aabb_max.y));
    }
    let finite = pts.iter().filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in finite {
        x0 = x0.min(*x);
        y0 = y0.min(*y);
        x1 = x1.max(*x);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        (x0, y0, x1, y1) = (-1.0, -1.0, 1.0, 1.0);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let map = |x: f64, y: f64| (MARGIN + (x - x0) * scale, SIZE - MARGIN - (y - y0) * scale);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let polyline = |s: &mut String, poses: &[SE3Pose], colour: &str| {
        let points: Vec<String> = poses
            .iter()
            .map(|p| {
                let (x, y) = map(p.translation().x, p.translation().y);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            points.join(" ")
        );
    };
    let rect = |s: &mut String, min: (f64, f64), max: (f64, f64), colour: &str, dash: &str| {
        let (ax, ay) = map(min.0, max.1);
        let (bx, by) = map(max.0, min.1);
        let _ = writeln!(
            s,
            r#"<rect x="{ax:.2}" y="{ay:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="{colour}" stroke-width="1.5"{dash}/>"#,
            bx - ax,
            by - ay
        );
    };
    let dot = |s: &mut String, x: f64, y: f64, colour: &str| {
        let (cx, cy) = map(x, y);
        let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="4" fill="{colour}"/>"#);
    };
    for o in objects {
        rect(&mut s, (o.aabb_min.x, o.aabb_min.y), (o.aabb_max.x, o.aabb_max.y), "green", "");
        let c = o.centroid();
        dot(&mut s, c.x, c.y, "green");
    }
    for q in landmarks.values() {
        let b = quadric_aabb(q);
        rect(&mut s, (b.min.x, b.min.y), (b.max.x, b.max.y), "blue", r#" stroke-dasharray="6 4""#);
        dot(&mut s, q.t.x, q.t.y, "blue");
    }
    polyline(&mut s, truth, "green");
    polyline(&mut s, odometry, "red");
    polyline(&mut s, estimate, "blue");
    for (k, (label, colour)) in [("ground truth", "green"), ("odometry", "red"), ("estimate", "blue")]
        .iter()
        .enumerate()
    {
        let y = 20.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="10" y1="{y}" x2="34" y2="{y}" stroke="{colour}" stroke-width="3"/><text x="40" y="{:.0}" font-family="sans-serif" font-size="13">{label}</text>"#,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}
