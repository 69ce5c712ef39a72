//! On-disk dataset formats.
//!
//! A trial directory holds `scene.json`, `gt_trajectory.jsonl`,
//! `odometry.jsonl` (the chained noisy trajectory), `detections.jsonl` and,
//! for simulated data, `meta.json`. Real-world runs need only `scene.json`
//! (intrinsics, objects may be empty), `odometry.jsonl` and
//! `detections.jsonl`.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use qslam_core::evaluation::fuse_class_scores;
use qslam_core::simulator::{chain_odometry, Detection, NoiseSpec, SceneObject, Trial};
use qslam_core::{BoundingBox, CameraIntrinsics, ConstrainedDualQuadric, SE3Pose};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

pub const SCENE_FILE: &str = "scene.json";
pub const GT_FILE: &str = "gt_trajectory.jsonl";
pub const ODOMETRY_FILE: &str = "odometry.jsonl";
pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const META_FILE: &str = "meta.json";
pub const ESTIMATE_TRAJECTORY_FILE: &str = "estimate_trajectory.jsonl";
pub const LANDMARKS_FILE: &str = "landmarks.json";
pub const INITIAL_LANDMARKS_FILE: &str = "initial_landmarks.json";
pub const COST_TRACE_FILE: &str = "cost_trace.csv";
pub const SKIP_LOG_FILE: &str = "skip_log.csv";

/// Largest accepted deviation of a stored quaternion from unit norm.
pub const QUATERNION_NORM_TOLERANCE: f64 = qslam_core::Tolerances::DEFAULT.quaternion_norm;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: u64,
    pub class: String,
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub objects: Vec<ObjectRecord>,
    pub intrinsics: CameraIntrinsics,
    /// Class names indexing the detection score vectors.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
}

impl SceneFile {
    pub fn scene_objects(&self) -> Result<Vec<SceneObject>> {
        self.objects
            .iter()
            .map(|o| {
                let (min, max) = (Vector3::from(o.aabb_min), Vector3::from(o.aabb_max));
                if (0..3).all(|k| min[k] < max[k]) {
                    Ok(SceneObject {
                        id: o.id,
                        class_label: o.class.clone(),
                        aabb_min: min,
                        aabb_max: max,
                    })
                } else {
                    Err(CliError::Dataset(format!("object {} has an empty box", o.id)))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: usize,
    pub t: [f64; 3],
    /// `(qw, qx, qy, qz)`
    pub q: [f64; 4],
}

impl PoseRecord {
    pub fn from_pose(frame: usize, pose: &SE3Pose) -> Self {
        let q = pose.quaternion();
        let t = pose.translation();
        Self {
            frame,
            t: [t.x, t.y, t.z],
            q: [q.w, q.i, q.j, q.k],
        }
    }

    pub fn to_pose(&self) -> Result<SE3Pose> {
        let [w, x, y, z] = self.q;
        let q = Quaternion::new(w, x, y, z);
        let norm = q.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_NORM_TOLERANCE {
            return Err(CliError::Dataset(format!(
                "frame {}: quaternion norm {norm} is not within {QUATERNION_NORM_TOLERANCE} of 1",
                self.frame
            )));
        }
        if self.t.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Dataset(format!("frame {}: non-finite translation", self.frame)));
        }
        Ok(SE3Pose::from_quaternion(
            UnitQuaternion::new_normalize(q),
            Vector3::from(self.t),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub frame: usize,
    pub object_id: u64,
    /// `[x_min, y_min, x_max, y_max]` in pixels.
    pub bbox: [f64; 4],
    #[serde(default)]
    pub scores: Vec<f64>,
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        Self {
            frame: d.frame,
            object_id: d.object_id,
            bbox: d.bbox.to_array(),
            scores: d.scores.clone(),
        }
    }
}

impl DetectionRecord {
    pub fn to_detection(&self) -> Result<Detection> {
        let bbox = BoundingBox::from_array(self.bbox).map_err(|e| {
            CliError::Dataset(format!("frame {} object {}: {e}", self.frame, self.object_id))
        })?;
        Ok(Detection {
            frame: self.frame,
            object_id: self.object_id,
            bbox,
            scores: self.scores.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub scene: usize,
    pub seed: usize,
    pub scene_seed: u64,
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scores: Vec<f64>,
    pub t: [f64; 3],
    /// Orientation `(qw, qx, qy, qz)`.
    pub q: [f64; 4],
    /// Semi-axes.
    pub s: [f64; 3],
}

impl LandmarkRecord {
    pub fn new(id: u64, quadric: &ConstrainedDualQuadric, class: Option<String>, scores: Vec<f64>) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&quadric.rotation());
        let q = if q.w < 0.0 { -q.into_inner() } else { q.into_inner() };
        Self {
            id,
            class,
            scores,
            t: quadric.t.into(),
            q: [q.w, q.i, q.j, q.k],
            s: quadric.s.into(),
        }
    }

    pub fn to_quadric(&self) -> Result<ConstrainedDualQuadric> {
        let pose = PoseRecord {
            frame: 0,
            t: self.t,
            q: self.q,
        }
        .to_pose()
        .map_err(|e| CliError::Dataset(format!("landmark {}: {e}", self.id)))?;
        ConstrainedDualQuadric::from_rotation(pose.rotation(), self.t.into(), self.s.into())
            .map_err(|e| CliError::Dataset(format!("landmark {}: {e}", self.id)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedLandmark {
    pub id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LandmarksFile {
    pub landmarks: Vec<LandmarkRecord>,
    #[serde(default)]
    pub excluded: Vec<ExcludedLandmark>,
}

/// Fused class label and distribution for one object's detections.
pub fn fused_label(detections: &[&Detection], classes: &[String]) -> (Option<String>, Vec<f64>) {
    let scores: Vec<Vec<f64>> = detections
        .iter()
        .filter(|d| !d.scores.is_empty())
        .map(|d| d.scores.clone())
        .collect();
    match fuse_class_scores(&scores) {
        Ok((label, fused)) => (classes.get(label).cloned().or(Some(label.to_string())), fused),
        Err(_) => (None, vec![]),
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("dataset records serialize");
    out.push(b'\n');
    out
}

pub fn to_jsonl_bytes<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("dataset records serialize");
        out.push(b'\n');
    }
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &to_json_bytes(value))
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_atomic(path, &to_jsonl_bytes(items))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Dataset(format!("{}: {e}", path.display())))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| CliError::Dataset(format!("{}:{}: {e}", path.display(), n + 1)))
        })
        .collect()
}

/// Poses ordered by frame; frames must be exactly `0..n`.
pub fn read_trajectory(path: &Path) -> Result<Vec<SE3Pose>> {
    let records: Vec<PoseRecord> = read_jsonl(path)?;
    trajectory_from_records(&records).map_err(|e| match e {
        CliError::Dataset(m) => CliError::Dataset(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn trajectory_from_records(records: &[PoseRecord]) -> Result<Vec<SE3Pose>> {
    let mut sorted: Vec<&PoseRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.frame);
    sorted
        .iter()
        .enumerate()
        .map(|(i, r)| {
            if r.frame != i {
                return Err(CliError::Dataset(format!("frames are not contiguous at frame {}", r.frame)));
            }
            r.to_pose()
        })
        .collect()
}

pub fn write_trajectory(path: &Path, poses: &[SE3Pose]) -> Result<()> {
    let records: Vec<PoseRecord> = poses.iter().enumerate().map(|(i, p)| PoseRecord::from_pose(i, p)).collect();
    write_jsonl(path, &records)
}

pub fn read_detections(path: &Path) -> Result<Vec<Detection>> {
    let records: Vec<DetectionRecord> = read_jsonl(path)?;
    records.iter().map(DetectionRecord::to_detection).collect()
}

pub fn read_landmarks(path: &Path) -> Result<LandmarksFile> {
    read_json(path)
}

/// Everything stored in a trial directory.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub dir: PathBuf,
    pub scene: SceneFile,
    pub odometry: Vec<SE3Pose>,
    pub detections: Vec<Detection>,
    pub ground_truth: Option<Vec<SE3Pose>>,
    pub meta: Option<TrialMeta>,
}

impl TrialData {
    pub fn load(dir: &Path) -> Result<Self> {
        let scene: SceneFile = read_json(&dir.join(SCENE_FILE))?;
        scene
            .intrinsics
            .validate()
            .map_err(|e| CliError::Dataset(format!("{}: {e}", dir.join(SCENE_FILE).display())))?;
        let odometry = read_trajectory(&dir.join(ODOMETRY_FILE))?;
        let detections = read_detections(&dir.join(DETECTIONS_FILE))?;
        let gt_path = dir.join(GT_FILE);
        let ground_truth = if gt_path.exists() { Some(read_trajectory(&gt_path)?) } else { None };
        let meta_path = dir.join(META_FILE);
        let meta = if meta_path.exists() { Some(read_json(&meta_path)?) } else { None };
        if let Some(d) = detections.iter().find(|d| d.frame >= odometry.len()) {
            return Err(CliError::Dataset(format!(
                "{}: detection references frame {} but odometry has {} poses",
                dir.display(),
                d.frame,
                odometry.len()
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            scene,
            odometry,
            detections,
            ground_truth,
            meta,
        })
    }
}

/// Relative path of a simulated trial below the dataset root.
pub fn trial_dir_name(scene: usize, seed: usize) -> PathBuf {
    PathBuf::from(format!("scene_{scene:02}")).join(format!("seed_{seed:02}"))
}

pub fn write_trial(dir: &Path, trial: &Trial, meta: &TrialMeta) -> Result<()> {
    let scene = SceneFile {
        objects: trial
            .scene
            .objects
            .iter()
            .map(|o| ObjectRecord {
                id: o.id,
                class: o.class_label.clone(),
                aabb_min: o.aabb_min.into(),
                aabb_max: o.aabb_max.into(),
            })
            .collect(),
        intrinsics: trial.scene.intrinsics,
        classes: trial.scene.classes.clone(),
    };
    let start = trial.ground_truth.first().copied().unwrap_or_else(SE3Pose::identity);
    let odometry = chain_odometry(&start, &trial.odometry);
    let detections: Vec<DetectionRecord> = trial.detections.iter().map(DetectionRecord::from).collect();
    write_json(&dir.join(SCENE_FILE), &scene)?;
    write_trajectory(&dir.join(GT_FILE), &trial.ground_truth)?;
    write_trajectory(&dir.join(ODOMETRY_FILE), &odometry)?;
    write_jsonl(&dir.join(DETECTIONS_FILE), &detections)?;
    write_json(&dir.join(META_FILE), meta)
}

/// Trial directories under `root` (or `root` itself), sorted by path.
pub fn find_trials(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(CliError::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut dirs: Vec<PathBuf> = walkdir::WalkDir::new(root)
        .max_depth(3)
        .sort_by_file_name()
        .into_iter()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().is_dir() && e.path().join(ODOMETRY_FILE).is_file())
        .map(|e| e.into_path())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(CliError::Dataset(format!("no trial directories with {ODOMETRY_FILE} under {}", root.display())));
    }
    Ok(dirs)
}

/// Trial name relative to the dataset root, with `/` separators.
pub fn trial_name(root: &Path, dir: &Path) -> String {
    let rel = dir.strip_prefix(root).unwrap_or(dir);
    let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
    if parts.is_empty() {
        ".".into()
    } else {
        parts.join("/")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_record_round_trip() {
        let pose = SE3Pose::exp(&nalgebra::Vector6::new(0.3, -0.2, 1.1, 1.0, 2.0, -3.0));
        let rec = PoseRecord::from_pose(4, &pose);
        let back = rec.to_pose().unwrap();
        assert!(pose.local(&back).norm() < 1e-12);
        assert!(rec.q[0] >= 0.0);
    }

    #[test]
    fn quaternion_norm_is_checked_and_normalized() {
        let mut rec = PoseRecord {
            frame: 0,
            t: [0.0; 3],
            q: [1.0 + 5e-7, 0.0, 0.0, 0.0],
        };
        assert!(rec.to_pose().is_ok());
        rec.q[0] = 1.0 + 1e-5;
        assert_eq!(rec.to_pose().unwrap_err().exit_code(), 3);
    }

    #[test]
    fn jsonl_uses_shortest_round_trip_floats() {
        let rec = DetectionRecord {
            frame: 1,
            object_id: 2,
            bbox: [0.1, 0.2, 100.30000000000001, 1e-7],
            scores: vec![],
        };
        let bytes = to_jsonl_bytes(std::slice::from_ref(&rec));
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.contains("100.30000000000001"));
        let back: DetectionRecord = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(to_jsonl_bytes(&[back]), bytes);
    }

    #[test]
    fn landmark_record_round_trip() {
        let q = ConstrainedDualQuadric::new(Vector3::new(0.4, -0.3, 0.9), Vector3::new(1.0, 2.0, 0.5), Vector3::new(0.5, 0.3, 0.2)).unwrap();
        let back = LandmarkRecord::new(3, &q, None, vec![]).to_quadric().unwrap();
        assert!((back.matrix() - q.matrix()).amax() < 1e-12);
    }

    #[test]
    fn non_contiguous_frames_are_rejected() {
        let recs = [PoseRecord::from_pose(0, &SE3Pose::identity()), PoseRecord::from_pose(2, &SE3Pose::identity())];
        assert!(trajectory_from_records(&recs).is_err());
    }
}
