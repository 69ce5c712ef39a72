use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use qslam_cli::commands::{cmd_evaluate, cmd_simulate, cmd_solve, estimate_dir_name, solve_trial};
use qslam_cli::config::ExperimentConfig;
use qslam_cli::dataset::{
    find_trials, read_landmarks, read_trajectory, write_json, write_trajectory, LandmarkRecord, LandmarksFile,
    TrialData, ESTIMATE_TRAJECTORY_FILE, INITIAL_LANDMARKS_FILE, LANDMARKS_FILE,
};
use qslam_cli::report::{SolveSummary, METHODS, SOLVE_SUMMARY_FILE};
use qslam_core::graph::ErrorMode;
use qslam_core::simulator::NoiseSpec;

fn small_config(trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        scenes: 2,
        seeds_per_scene: 2,
        trials: Some(trials),
        seed: 11,
        workers: Some(2),
        ..ExperimentConfig::default()
    }
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    walkdir::WalkDir::new(root)
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_file())
        .map(|e| (e.path().strip_prefix(root).unwrap().to_path_buf(), std::fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn default_config_emits_ten_scenes_of_five_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = cmd_simulate(&ExperimentConfig::default(), tmp.path()).unwrap();
    assert_eq!(dirs.len(), 50);
    assert_eq!(find_trials(tmp.path()).unwrap(), dirs);
    assert!(tmp.path().join("scene_09/seed_04/detections.jsonl").is_file());
}

#[test]
fn single_trial_flag_emits_one_trial() {
    let tmp = tempfile::tempdir().unwrap();
    let dirs = cmd_simulate(&small_config(1), tmp.path()).unwrap();
    assert_eq!(dirs.len(), 1);
    assert_eq!(find_trials(tmp.path()).unwrap().len(), 1);
}

#[test]
fn same_seed_gives_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    cmd_simulate(&small_config(3), a.path()).unwrap();
    cmd_simulate(&small_config(3), b.path()).unwrap();
    let fa = files_under(a.path());
    assert!(fa.len() > 10);
    assert_eq!(fa, files_under(b.path()));
}

#[test]
fn zero_noise_solve_recovers_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        noise: NoiseSpec::zero(0),
        ..small_config(2)
    };
    for dir in cmd_simulate(&cfg, tmp.path()).unwrap() {
        let summary = solve_trial(&dir, &cfg).unwrap();
        assert!(summary.final_cost < 1e-10, "cost {}", summary.final_cost);
        let data = TrialData::load(&dir).unwrap();
        let est_dir = dir.join(estimate_dir_name(ErrorMode::Geometric));
        let est = read_trajectory(&est_dir.join(ESTIMATE_TRAJECTORY_FILE)).unwrap();
        for (e, t) in est.iter().zip(data.ground_truth.as_ref().unwrap()) {
            assert!((e.translation() - t.translation()).norm() < 1e-6);
            assert!(e.between(t).angle() < 1e-6, "angle {}", e.between(t).angle());
        }
        let objects = data.scene.scene_objects().unwrap();
        let lms = read_landmarks(&est_dir.join(LANDMARKS_FILE)).unwrap();
        assert_eq!(lms.landmarks.len(), objects.len());
        for l in &lms.landmarks {
            let o = objects.iter().find(|o| o.id == l.id).unwrap();
            let q = l.to_quadric().unwrap();
            assert!((q.t - o.centroid()).norm() < 1e-6);
            assert!((q.aabb_half_extents() - (o.aabb_max - o.aabb_min) / 2.0).norm() < 1e-6);
            assert_eq!(l.class.as_deref(), Some(o.class_label.as_str()));
        }
    }
}

#[test]
fn error_modes_write_distinct_landmark_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(1);
    cmd_simulate(&cfg, tmp.path()).unwrap();
    cmd_solve(tmp.path(), &cfg).unwrap();
    let alg = ExperimentConfig {
        error_mode: ErrorMode::Algebraic,
        ..cfg.clone()
    };
    cmd_solve(tmp.path(), &alg).unwrap();
    let dir = &find_trials(tmp.path()).unwrap()[0];
    let g = std::fs::read(dir.join("estimate_geometric").join(LANDMARKS_FILE)).unwrap();
    let a = std::fs::read(dir.join("estimate_algebraic").join(LANDMARKS_FILE)).unwrap();
    assert_ne!(g, a);
}

#[test]
fn bbox_std_rejection_excludes_flagged_landmarks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(1);
    cmd_simulate(&cfg, tmp.path()).unwrap();
    let strict = ExperimentConfig {
        reject_bbox_std: Some([1e-3, 1e-3]),
        ..cfg.clone()
    };
    let solved = cmd_solve(tmp.path(), &strict).unwrap();
    let (dir, summary) = &solved[0];
    assert_eq!(summary.landmarks, 0);
    let lms = read_landmarks(&dir.join("estimate_geometric").join(LANDMARKS_FILE)).unwrap();
    assert!(lms.landmarks.is_empty());
    assert_eq!(lms.excluded.len(), summary.excluded);
    assert!(lms.excluded.iter().all(|e| e.reason.contains("std")));
}

#[test]
fn evaluate_is_deterministic_and_ordered() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let cfg = small_config(3);
    cmd_simulate(&cfg, &data).unwrap();
    cmd_solve(&data, &cfg).unwrap();
    let (r1, r2) = (tmp.path().join("r1"), tmp.path().join("r2"));
    let eval = cmd_evaluate(&data, "estimate_geometric", &r1, 2).unwrap();
    cmd_evaluate(&data, "estimate_geometric", &r2, 1).unwrap();
    assert_eq!(files_under(&r1), files_under(&r2));
    let methods: Vec<&str> = eval.aggregate.iter().map(|r| r.method).collect();
    assert_eq!(methods[..3], METHODS);
    assert_eq!(methods[3..], METHODS);
    assert_eq!(std::fs::read_dir(r1.join("plots")).unwrap().count(), 3);
}

#[test]
fn perfect_estimates_give_zero_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(1);
    let dir = cmd_simulate(&cfg, tmp.path()).unwrap().remove(0);
    let data = TrialData::load(&dir).unwrap();
    let est_dir = dir.join("perfect");
    std::fs::create_dir_all(&est_dir).unwrap();
    write_trajectory(&est_dir.join(ESTIMATE_TRAJECTORY_FILE), data.ground_truth.as_ref().unwrap()).unwrap();
    let lms = LandmarksFile {
        landmarks: data
            .scene
            .scene_objects()
            .unwrap()
            .iter()
            .map(|o| LandmarkRecord::new(o.id, &o.ellipsoid(), None, vec![]))
            .collect(),
        excluded: vec![],
    };
    write_json(&est_dir.join(LANDMARKS_FILE), &lms).unwrap();
    write_json(&est_dir.join(INITIAL_LANDMARKS_FILE), &lms).unwrap();
    let summary = SolveSummary {
        error_mode: "geometric".into(),
        iterations: 0,
        converged: true,
        initial_cost: 0.0,
        final_cost: 0.0,
        skipped_factors: 0,
        landmarks: lms.landmarks.len(),
        excluded: 0,
    };
    write_json(&est_dir.join(SOLVE_SUMMARY_FILE), &summary).unwrap();
    let eval = cmd_evaluate(tmp.path(), "perfect", &tmp.path().join("r"), 1).unwrap();
    let row = &eval.aggregate[2];
    for v in [row.ate_trans, row.lm_trans, row.lm_shape, row.lm_quality] {
        assert!(v.unwrap().abs() < 1e-12, "{v:?}");
    }
}

#[test]
fn evaluate_without_estimates_is_a_dataset_error() {
    let tmp = tempfile::tempdir().unwrap();
    cmd_simulate(&small_config(1), tmp.path()).unwrap();
    let err = cmd_evaluate(tmp.path(), "missing", &tmp.path().join("r"), 1).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}

fn qslam(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_qslam"))
        .args(args)
        .env("QSLAM_WORKERS", "2")
        .output()
        .unwrap()
}

#[test]
fn binary_runs_all_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d");
    let out = tmp.path().join("r");
    let (d, o) = (data.to_str().unwrap(), out.to_str().unwrap());
    let sim = qslam(&["simulate", "--out", d, "--seed", "3", "--scenes", "1", "--seeds-per-scene", "3", "--trials", "2"]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
    assert_eq!(find_trials(&data).unwrap().len(), 2);
    let solve = qslam(&["solve", "--dataset", d, "--error-mode", "algebraic", "--reject-bbox-std", "50,30", "--max-iters", "5"]);
    assert!(solve.status.success(), "{}", String::from_utf8_lossy(&solve.stderr));
    let eval = qslam(&["evaluate", "--dataset", d, "--estimates", "estimate_algebraic", "--out", o]);
    assert!(eval.status.success(), "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(String::from_utf8_lossy(&eval.stdout).contains("QuadricSLAM"));
    assert!(out.join("summary.csv").is_file());
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, r#"{"scenes": 0}"#).unwrap();
    let out = tmp.path().join("x");
    let r = qslam(&["simulate", "--config", bad.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(2));
    let r = qslam(&["solve", "--dataset", tmp.path().join("none").to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(3));
    let r = qslam(&["solve", "--dataset", ".", "--reject-bbox-std", "50"]);
    assert_eq!(r.status.code(), Some(2));
}
