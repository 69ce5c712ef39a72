//! The simulate, solve and evaluate commands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use qslam_core::graph::ErrorMode;
use qslam_core::simulator::simulate_trial;
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::dataset::{
    find_trials, fused_label, trial_dir_name, trial_name, write_atomic, write_json, write_trajectory, write_trial,
    ExcludedLandmark, LandmarkRecord, LandmarksFile, TrialData, TrialMeta, COST_TRACE_FILE,
    ESTIMATE_TRAJECTORY_FILE, INITIAL_LANDMARKS_FILE, LANDMARKS_FILE, SKIP_LOG_FILE,
};
use crate::pipeline::{solve, SolveInput, SolveOptions};
use crate::report::{
    aggregate, csv_bytes, evaluate_trial, AggregateRow, MethodRow, SolveSummary, TrialEvaluation,
    SOLVE_SUMMARY_FILE,
};
use crate::{CliError, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const PER_TRIAL_FILE: &str = "per_trial.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const REPORTS_FILE: &str = "reports.jsonl";
pub const PLOTS_DIR: &str = "plots";

/// Name of the estimate directory written inside each trial by `solve`.
pub fn estimate_dir_name(mode: ErrorMode) -> String {
    format!("estimate_{mode}")
}

fn run_parallel<T, R, F>(workers: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect::<Vec<_>>())
        .into_iter()
        .collect()
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Simulates every trial of the configured layout under `out`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    create_dir(out)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let layout = cfg.trial_layout();
    let dirs = run_parallel(cfg.resolved_workers()?, &layout, |&(s, k)| {
        let mut noise = cfg.noise;
        noise.seed = cfg.noise_seed(s, k);
        let scene_seed = cfg.scene_seed(s);
        let trial = simulate_trial(&cfg.scene, scene_seed, &noise)
            .map_err(|e| CliError::Config(format!("scene {s} seed {k}: {e}")))?;
        let dir = out.join(trial_dir_name(s, k));
        create_dir(&dir)?;
        let meta = TrialMeta {
            scene: s,
            seed: k,
            scene_seed,
            noise,
        };
        write_trial(&dir, &trial, &meta)?;
        Ok(dir)
    })?;
    info!("simulated {} trial(s) under {}", dirs.len(), out.display());
    Ok(dirs)
}

fn cost_trace_csv(summary: &qslam_core::graph::OptimizationResult) -> Vec<u8> {
    csv_bytes(
        &["iteration", "cost", "damping", "accepted", "skipped_factors"],
        summary.cost_trace.iter().map(|c| {
            vec![
                c.iteration.to_string(),
                c.cost.to_string(),
                c.damping.to_string(),
                c.accepted.to_string(),
                c.skipped_factors.to_string(),
            ]
        }),
    )
}

fn skip_log_csv(result: &qslam_core::graph::OptimizationResult, ids: &[u64]) -> Vec<u8> {
    csv_bytes(
        &["iteration", "frame", "object_id", "reason"],
        result.skip_log.iter().map(|s| {
            vec![
                s.iteration.to_string(),
                s.pose.to_string(),
                ids.get(s.landmark).map(u64::to_string).unwrap_or_default(),
                s.reason.clone(),
            ]
        }),
    )
}

/// Solves one trial directory and writes its estimate directory.
pub fn solve_trial(dir: &Path, cfg: &ExperimentConfig) -> Result<SolveSummary> {
    let data = TrialData::load(dir)?;
    let opts = SolveOptions {
        solver: cfg.solver,
        error_mode: cfg.error_mode,
        init: cfg.init_config(),
        reject_bbox_std: cfg.reject_bbox_std,
    };
    let input = SolveInput {
        intrinsics: data.scene.intrinsics,
        odometry: &data.odometry,
        detections: &data.detections,
        noise: data.meta.map(|m| m.noise),
    };
    let out = solve(&input, &opts).map_err(|e| match e {
        CliError::Divergence(m) => CliError::Divergence(format!("{}: {m}", dir.display())),
        CliError::Dataset(m) => CliError::Dataset(format!("{}: {m}", dir.display())),
        other => other,
    })?;

    let classes = data.scene.classes.clone();
    let mut by_object: BTreeMap<u64, Vec<&qslam_core::simulator::Detection>> = BTreeMap::new();
    for d in &data.detections {
        by_object.entry(d.object_id).or_default().push(d);
    }
    let records = |map: &BTreeMap<u64, qslam_core::ConstrainedDualQuadric>| -> Vec<LandmarkRecord> {
        map.iter()
            .map(|(id, q)| {
                let (class, scores) = fused_label(&by_object[id], &classes);
                LandmarkRecord::new(*id, q, class, scores)
            })
            .collect()
    };
    let excluded: Vec<ExcludedLandmark> = out
        .excluded
        .iter()
        .map(|e| ExcludedLandmark {
            id: e.id,
            reason: e.reason.clone(),
        })
        .collect();
    if !excluded.is_empty() {
        info!("{}: {} landmark(s) excluded", dir.display(), excluded.len());
    }

    let est_dir = dir.join(estimate_dir_name(cfg.error_mode));
    create_dir(&est_dir)?;
    write_trajectory(&est_dir.join(ESTIMATE_TRAJECTORY_FILE), &out.poses)?;
    write_json(
        &est_dir.join(LANDMARKS_FILE),
        &LandmarksFile {
            landmarks: records(&out.landmarks),
            excluded: excluded.clone(),
        },
    )?;
    write_json(
        &est_dir.join(INITIAL_LANDMARKS_FILE),
        &LandmarksFile {
            landmarks: records(&out.initial_landmarks),
            excluded,
        },
    )?;
    let ids: Vec<u64> = out.landmarks.keys().copied().collect();
    write_atomic(&est_dir.join(COST_TRACE_FILE), &cost_trace_csv(&out.result))?;
    write_atomic(&est_dir.join(SKIP_LOG_FILE), &skip_log_csv(&out.result, &ids))?;
    let summary = SolveSummary {
        error_mode: cfg.error_mode.to_string(),
        iterations: out.result.iterations,
        converged: out.result.converged,
        initial_cost: out.result.initial_cost(),
        final_cost: out.result.final_cost(),
        skipped_factors: out.result.skipped_factors,
        landmarks: out.landmarks.len(),
        excluded: out.excluded.len(),
    };
    write_json(&est_dir.join(SOLVE_SUMMARY_FILE), &summary)?;
    Ok(summary)
}

/// Solves every trial under `dataset`.
pub fn cmd_solve(dataset: &Path, cfg: &ExperimentConfig) -> Result<Vec<(PathBuf, SolveSummary)>> {
    cfg.validate()?;
    let dirs = find_trials(dataset)?;
    let summaries = run_parallel(cfg.resolved_workers()?, &dirs, |d| solve_trial(d, cfg))?;
    let excluded: usize = summaries.iter().map(|s| s.excluded).sum();
    info!("solved {} trial(s); {excluded} landmark(s) excluded in total", dirs.len());
    Ok(dirs.into_iter().zip(summaries).collect())
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub trials: Vec<TrialEvaluation>,
    pub aggregate: Vec<AggregateRow>,
}

/// Evaluates the estimates named `estimates` in every trial under `dataset`
/// and writes the reports to `out`.
pub fn cmd_evaluate(dataset: &Path, estimates: &str, out: &Path, workers: usize) -> Result<Evaluation> {
    let dirs = find_trials(dataset)?;
    let trials = run_parallel(workers, &dirs, |d| evaluate_trial(dataset, d, estimates))?;
    let aggregate = aggregate(&trials);

    create_dir(&out.join(PLOTS_DIR))?;
    let rows = trials.iter().flat_map(|t| t.rows.iter().map(MethodRow::csv_record));
    write_atomic(&out.join(PER_TRIAL_FILE), &csv_bytes(&MethodRow::CSV_HEADER, rows))?;
    write_atomic(
        &out.join(SUMMARY_FILE),
        &csv_bytes(&AggregateRow::CSV_HEADER, aggregate.iter().map(AggregateRow::csv_record)),
    )?;
    let mut jsonl = String::new();
    for r in trials.iter().filter_map(|t| t.report.as_ref()) {
        jsonl.push_str(&r.to_json());
        jsonl.push('\n');
    }
    write_atomic(&out.join(REPORTS_FILE), jsonl.as_bytes())?;
    for (dir, t) in dirs.iter().zip(&trials) {
        let name = trial_name(dataset, dir).replace('/', "_");
        write_atomic(&out.join(PLOTS_DIR).join(format!("{name}.svg")), t.svg.as_bytes())?;
    }
    info!("evaluated {} trial(s)", trials.len());
    Ok(Evaluation { trials, aggregate })
}
