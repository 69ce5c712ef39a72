//! Synthetic scenes, camera trajectories, noisy odometry and noisy detections.
//!
//! Ground-truth objects are axis-aligned boxes; the surface a detector "sees"
//! is the ellipsoid inscribed in each box. Data association is exact.

use nalgebra::{Matrix4, Matrix6, Rotation3, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{predict_bbox, BoundingBox, CameraIntrinsics, ConstrainedDualQuadric, SE3Pose};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("could not place object {0} after {1} attempts")]
    PlacementFailure(usize, usize),
    #[error("no trajectory observed every object at least {0} times after {1} attempts")]
    CoverageFailure(usize, usize),
    #[error("invalid simulation parameters: {0}")]
    InvalidSpec(&'static str),
}

/// RNG sub-streams so that scene, trajectory and noise draws stay independent.
const STREAM_SCENE: u64 = 1;
const STREAM_TRAJECTORY: u64 = 2;
const STREAM_ODOMETRY: u64 = 3;
const STREAM_DETECTIONS: u64 = 4;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: u64,
    pub class_label: String,
    pub aabb_min: Vector3<f64>,
    pub aabb_max: Vector3<f64>,
}

impl SceneObject {
    pub fn centroid(&self) -> Vector3<f64> {
        (self.aabb_min + self.aabb_max) * 0.5
    }

    /// Ellipsoid inscribed in the box.
    pub fn ellipsoid(&self) -> ConstrainedDualQuadric {
        ConstrainedDualQuadric {
            theta: Vector3::zeros(),
            t: self.centroid(),
            s: (self.aabb_max - self.aabb_min) * 0.5,
        }
    }

    fn contains_with_margin(&self, p: &Vector3<f64>, margin: f64) -> bool {
        (0..3).all(|k| p[k] > self.aabb_min[k] - margin && p[k] < self.aabb_max[k] + margin)
    }
}

/// How the camera moves through the scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryKind {
    /// Circle outside the objects, looking at their centroid.
    #[default]
    Orbit,
    /// Small circle inside a ring of objects, looking outward.
    Pan,
}

/// Where object centres are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    /// Uniform in the square `±placement_half_extent`.
    #[default]
    Square,
    /// Uniform in radius and angle on the ring `ring_radii` around the origin.
    Ring,
}

/// Scene layout and camera path parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub n_objects: usize,
    /// Room extents `(x, y, z)`; the room spans `±x/2`, `±y/2` and `0..z`.
    pub room: [f64; 3],
    /// Object centres are drawn within `±placement_half_extent` in x and y.
    pub placement_half_extent: f64,
    pub ring_radii: [f64; 2],
    pub placement: Placement,
    pub trajectory: TrajectoryKind,
    pub min_object_size: f64,
    pub max_object_size: f64,
    pub classes: Vec<String>,
    pub orbit_radius: f64,
    /// Amplitude of smooth radius variation along the orbit.
    pub orbit_radius_jitter: f64,
    pub camera_height: f64,
    pub camera_height_jitter: f64,
    /// Amplitude (scene units) of the smooth wander of the look-at target.
    pub look_at_jitter: f64,
    /// Angular span of the orbit in degrees.
    pub arc_degrees: f64,
    pub n_poses: usize,
    /// Every object must be detected from at least this many poses.
    pub min_views_per_object: usize,
    pub max_attempts: usize,
    pub intrinsics: CameraIntrinsics,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            n_objects: 5,
            room: [10.0, 10.0, 3.0],
            placement_half_extent: 2.5,
            ring_radii: [2.5, 3.5],
            placement: Placement::Square,
            trajectory: TrajectoryKind::Orbit,
            min_object_size: 0.4,
            max_object_size: 1.4,
            classes: ["chair", "table", "monitor", "plant", "cabinet", "box"]
                .into_iter()
                .map(String::from)
                .collect(),
            orbit_radius: 6.5,
            orbit_radius_jitter: 0.5,
            camera_height: 1.6,
            camera_height_jitter: 0.3,
            look_at_jitter: 0.5,
            arc_degrees: 360.0,
            n_poses: 36,
            min_views_per_object: 3,
            max_attempts: 200,
            intrinsics: CameraIntrinsics::default(),
        }
    }
}

impl SceneSpec {
    /// Large objects on a ring with the orbit passing close outside it, so a
    /// large share of detections is cut by the image border.
    pub fn close_range() -> Self {
        Self {
            n_objects: 5,
            ring_radii: [2.0, 3.0],
            placement: Placement::Ring,
            min_object_size: 1.2,
            max_object_size: 2.2,
            orbit_radius: 4.5,
            orbit_radius_jitter: 0.2,
            look_at_jitter: 3.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_objects == 0 {
            return Err(SimError::InvalidSpec("at least one object is required"));
        }
        if self.n_poses < 2 {
            return Err(SimError::InvalidSpec("at least two poses are required"));
        }
        if !(self.min_object_size > 0.0 && self.min_object_size <= self.max_object_size) {
            return Err(SimError::InvalidSpec("object sizes must satisfy 0 < min <= max"));
        }
        if self.classes.is_empty() {
            return Err(SimError::InvalidSpec("at least one class label is required"));
        }
        if !(0.0 <= self.ring_radii[0] && self.ring_radii[0] <= self.ring_radii[1]) {
            return Err(SimError::InvalidSpec("ring radii must satisfy 0 <= inner <= outer"));
        }
        if self.room.iter().any(|v| v.is_nan() || *v <= 0.0) || self.orbit_radius <= 0.0 {
            return Err(SimError::InvalidSpec("room and orbit must have positive size"));
        }
        self.intrinsics
            .validate()
            .map_err(|_| SimError::InvalidSpec("invalid intrinsics"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// Per-axis translation noise as a fraction of the step length.
    pub trans_fraction: f64,
    /// Rotation noise angle as a fraction of the step rotation angle.
    pub rot_fraction: f64,
    /// Per-coordinate detection noise (pixels).
    pub det_sigma_px: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            trans_fraction: 0.05,
            rot_fraction: 0.15,
            det_sigma_px: 2.0,
            seed: 0,
        }
    }
}

/// Smallest standard deviations used when noise magnitudes are turned into
/// factor covariances, so zero-noise runs stay well conditioned.
pub const MIN_TRANS_SIGMA: f64 = 1e-3;
pub const MIN_ROT_SIGMA: f64 = 1e-3;
pub const MIN_DET_SIGMA_PX: f64 = 0.5;

impl NoiseSpec {
    pub fn zero(seed: u64) -> Self {
        Self {
            trans_fraction: 0.0,
            rot_fraction: 0.0,
            det_sigma_px: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let v = [self.trans_fraction, self.rot_fraction, self.det_sigma_px];
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(SimError::InvalidSpec("noise magnitudes must be non-negative"));
        }
        Ok(())
    }

    /// Covariance matching the noise injected into relative motion `u`.
    ///
    /// Rotation noise of standard deviation `σ` about a uniform random axis
    /// puts `σ²/3` on each rotation component.
    pub fn odometry_covariance(&self, u: &SE3Pose) -> Matrix6<f64> {
        let t = (self.trans_fraction * u.translation().norm()).max(MIN_TRANS_SIGMA);
        let r = (self.rot_fraction * u.angle() / 3f64.sqrt()).max(MIN_ROT_SIGMA);
        Matrix6::from_diagonal(&Vector6::new(r * r, r * r, r * r, t * t, t * t, t * t))
    }

    pub fn detection_covariance(&self) -> Matrix4<f64> {
        let s = self.det_sigma_px.max(MIN_DET_SIGMA_PX);
        Matrix4::identity() * (s * s)
    }
}

/// One simulated detection with ground-truth association.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub object_id: u64,
    pub bbox: BoundingBox,
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub objects: Vec<SceneObject>,
    pub intrinsics: CameraIntrinsics,
    pub classes: Vec<String>,
}

impl Scene {
    pub fn centroid(&self) -> Vector3<f64> {
        let sum: Vector3<f64> = self.objects.iter().map(SceneObject::centroid).sum();
        sum / self.objects.len().max(1) as f64
    }
}

/// A complete simulated run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub scene: Scene,
    pub ground_truth: Vec<SE3Pose>,
    /// Noisy relative motions; entry `i` links pose `i` to `i + 1`.
    pub odometry: Vec<SE3Pose>,
    pub detections: Vec<Detection>,
    pub noise: NoiseSpec,
}

/// Places non-overlapping objects on the floor of the room.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Scene, SimError> {
    spec.validate()?;
    let mut rng = rng_for(seed, STREAM_SCENE);
    let half = [spec.room[0] / 2.0, spec.room[1] / 2.0];
    let place = spec.placement_half_extent;
    let gap = 0.1;
    let tries = spec.max_attempts.max(1) * 10;
    let mut objects: Vec<SceneObject> = Vec::with_capacity(spec.n_objects);
    for id in 0..spec.n_objects {
        let mut placed = None;
        for _ in 0..tries {
            let size = Vector3::from_fn(|k, _| {
                let s = rng.random_range(spec.min_object_size..=spec.max_object_size);
                if k == 2 {
                    s.min(spec.room[2])
                } else {
                    s
                }
            });
            let (cx, cy) = match spec.placement {
                Placement::Square => (rng.random_range(-place..=place), rng.random_range(-place..=place)),
                Placement::Ring => {
                    let [r0, r1] = spec.ring_radii;
                    let r = rng.random_range(r0..=r1);
                    let a = rng.random_range(0.0..std::f64::consts::TAU);
                    (r * a.cos(), r * a.sin())
                }
            };
            let min = Vector3::new(cx - size.x / 2.0, cy - size.y / 2.0, 0.0);
            let max = min + size;
            let in_room = min.x >= -half[0] && max.x <= half[0] && min.y >= -half[1] && max.y <= half[1];
            let clear = objects.iter().all(|o| {
                (0..2).any(|k| max[k] + gap <= o.aabb_min[k] || min[k] >= o.aabb_max[k] + gap)
            });
            if in_room && clear {
                placed = Some((min, max));
                break;
            }
        }
        let (aabb_min, aabb_max) = placed.ok_or(SimError::PlacementFailure(id, tries))?;
        let class_label = spec.classes[rng.random_range(0..spec.classes.len())].clone();
        objects.push(SceneObject {
            id: id as u64,
            class_label,
            aabb_min,
            aabb_max,
        });
    }
    Ok(Scene {
        objects,
        intrinsics: spec.intrinsics,
        classes: spec.classes.clone(),
    })
}

/// Circular path with smoothly varying radius, height and gaze. An orbit
/// circles the object centroid looking inward; a pan circles the origin
/// looking outward.
///
/// Candidate paths are redrawn until every camera is clear of every object
/// and each object is detected from at least `min_views_per_object` poses.
pub fn generate_trajectory(scene: &Scene, spec: &SceneSpec, seed: u64) -> Result<Vec<SE3Pose>, SimError> {
    spec.validate()?;
    let mut rng = rng_for(seed, STREAM_TRAJECTORY);
    let centre = match spec.trajectory {
        TrajectoryKind::Orbit => scene.centroid(),
        TrajectoryKind::Pan => Vector3::zeros(),
    };
    let n = spec.n_poses;
    let arc = spec.arc_degrees.to_radians();
    for _ in 0..spec.max_attempts.max(1) {
        let start: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let direction = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let phases: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
        let freqs: [f64; 5] = std::array::from_fn(|_| rng.random_range(1.0..3.0));
        let poses: Option<Vec<SE3Pose>> = (0..n)
            .map(|i| {
                let u = i as f64 / n as f64;
                let angle = start + direction * arc * u;
                let wave = |k: usize| (freqs[k] * arc * u + phases[k]).sin();
                let radius = spec.orbit_radius + spec.orbit_radius_jitter * wave(0);
                let height = spec.camera_height + spec.camera_height_jitter * wave(1);
                let eye = Vector3::new(
                    centre.x + radius * angle.cos(),
                    centre.y + radius * angle.sin(),
                    height,
                );
                let wander = Vector3::new(wave(2), wave(3), 0.3 * wave(4)) * spec.look_at_jitter;
                let target = match spec.trajectory {
                    TrajectoryKind::Orbit => centre + wander,
                    TrajectoryKind::Pan => {
                        let out = Vector3::new(angle.cos(), angle.sin(), 0.0);
                        Vector3::new(eye.x, eye.y, spec.room[2] / 4.0) + out * 3.0 + wander
                    }
                };
                SE3Pose::look_at(eye, target, Vector3::z()).ok()
            })
            .collect();
        let Some(poses) = poses else { continue };
        let clear = poses.iter().all(|p| {
            scene
                .objects
                .iter()
                .all(|o| !o.contains_with_margin(p.translation(), 0.5))
        });
        if !clear {
            continue;
        }
        let covered = scene.objects.iter().all(|o| {
            let q = o.ellipsoid();
            poses
                .iter()
                .filter(|p| visible_box(p, &scene.intrinsics, &q).is_some())
                .count()
                >= spec.min_views_per_object
        });
        if covered {
            return Ok(poses);
        }
    }
    Err(SimError::CoverageFailure(spec.min_views_per_object, spec.max_attempts))
}

fn visible_box(pose: &SE3Pose, k: &CameraIntrinsics, q: &ConstrainedDualQuadric) -> Option<BoundingBox> {
    predict_bbox(pose, k, q)
        .ok()
        .filter(|b| b.width() > 1e-6 && b.height() > 1e-6)
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma is finite and non-negative")
}

/// Noisy relative motions between consecutive ground-truth poses.
pub fn corrupt_odometry(trajectory: &[SE3Pose], noise: &NoiseSpec) -> Vec<SE3Pose> {
    let mut rng = rng_for(noise.seed, STREAM_ODOMETRY);
    trajectory
        .windows(2)
        .map(|w| {
            let u = w[0].between(&w[1]);
            let t_sigma = noise.trans_fraction * u.translation().norm();
            let r_sigma = noise.rot_fraction * u.angle();
            let dt = Vector3::from_fn(|_, _| normal(t_sigma).sample(&mut rng));
            let axis: [f64; 3] = UnitSphere.sample(&mut rng);
            let angle = normal(r_sigma).sample(&mut rng);
            let dr = Rotation3::new(Vector3::from(axis) * angle);
            SE3Pose::from_parts(u.rotation() * dr, u.translation() + dt)
        })
        .collect()
}

/// Poses obtained by integrating relative motions from `start`.
pub fn chain_odometry(start: &SE3Pose, steps: &[SE3Pose]) -> Vec<SE3Pose> {
    let mut out = Vec::with_capacity(steps.len() + 1);
    out.push(*start);
    for u in steps {
        let next = out.last().expect("non-empty").compose(u);
        out.push(next);
    }
    out
}

/// Adds per-coordinate Gaussian noise; the result may leave the image.
pub fn perturb_box<R: Rng + ?Sized>(b: &BoundingBox, sigma: f64, rng: &mut R) -> BoundingBox {
    let d = normal(sigma);
    let v = b.to_array().map(|x| x + d.sample(rng));
    BoundingBox {
        x_min: v[0].min(v[2]),
        y_min: v[1].min(v[3]),
        x_max: v[0].max(v[2]),
        y_max: v[1].max(v[3]),
    }
}

fn class_scores<R: Rng + ?Sized>(true_class: usize, n_classes: usize, rng: &mut R) -> Vec<f64> {
    let mut s: Vec<f64> = (0..n_classes).map(|_| rng.random_range(0.0..1.0)).collect();
    s[true_class] += 1.5;
    let total: f64 = s.iter().sum();
    s.iter().map(|v| v / total).collect()
}

/// Noisy detections of every object visible from every pose.
pub fn simulate_detections(
    trajectory: &[SE3Pose],
    scene: &Scene,
    noise: &NoiseSpec,
) -> Vec<Detection> {
    let mut rng = rng_for(noise.seed, STREAM_DETECTIONS);
    let k = &scene.intrinsics;
    let mut out = Vec::new();
    for (frame, pose) in trajectory.iter().enumerate() {
        for obj in &scene.objects {
            let Some(truth) = visible_box(pose, k, &obj.ellipsoid()) else {
                continue;
            };
            let bbox = if noise.det_sigma_px > 0.0 {
                perturb_box(&truth, noise.det_sigma_px, &mut rng).clamp_to(k)
            } else {
                truth
            };
            let true_class = scene
                .classes
                .iter()
                .position(|c| *c == obj.class_label)
                .unwrap_or(0);
            let scores = class_scores(true_class, scene.classes.len(), &mut rng);
            if bbox.width() > 0.0 && bbox.height() > 0.0 {
                out.push(Detection {
                    frame,
                    object_id: obj.id,
                    bbox,
                    scores,
                });
            }
        }
    }
    out
}

/// Scene, trajectory, odometry and detections for one trial. The scene and
/// trajectory depend only on `scene_seed`; all noise draws on `noise.seed`.
pub fn simulate_trial(spec: &SceneSpec, scene_seed: u64, noise: &NoiseSpec) -> Result<Trial, SimError> {
    noise.validate()?;
    let scene = generate_scene(spec, scene_seed)?;
    let ground_truth = generate_trajectory(&scene, spec, scene_seed)?;
    let odometry = corrupt_odometry(&ground_truth, noise);
    let detections = simulate_detections(&ground_truth, &scene, noise);
    Ok(Trial {
        scene,
        ground_truth,
        odometry,
        detections,
        noise: *noise,
    })
}
