//! Experiment configuration loaded from JSON.

use std::path::{Path, PathBuf};

use qslam_core::graph::{ErrorMode, SolverConfig};
use qslam_core::initializer::InitConfig;
use qslam_core::simulator::{NoiseSpec, SceneSpec};
use serde::{Deserialize, Serialize};

use crate::{CliError, Result};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "QSLAM_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scene: SceneSpec,
    pub noise: NoiseSpec,
    pub solver: SolverConfig,
    pub error_mode: ErrorMode,
    pub scenes: usize,
    pub seeds_per_scene: usize,
    /// Cap on the number of trials emitted, taken in layout order.
    pub trials: Option<usize>,
    /// Base seed from which scene and noise seeds are derived.
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Exclude landmarks whose detection width or height standard deviation
    /// (px) exceeds these limits.
    pub reject_bbox_std: Option<[f64; 2]>,
    pub min_detections: usize,
    pub keep_behind_camera: bool,
    /// Leave border-truncated detections out of landmark initialization.
    pub skip_truncated: bool,
    pub truncation_margin_px: f64,
    /// Retry failed landmark initializations on runs of consecutive detections.
    pub window_fallback: bool,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SceneSpec::default(),
            noise: NoiseSpec::default(),
            solver: SolverConfig::default(),
            error_mode: ErrorMode::Geometric,
            scenes: 10,
            seeds_per_scene: 5,
            trials: None,
            seed: 0,
            output_dir: PathBuf::from("qslam_out"),
            reject_bbox_std: None,
            min_detections: InitConfig::default().min_detections,
            keep_behind_camera: false,
            skip_truncated: InitConfig::default().skip_truncated,
            truncation_margin_px: InitConfig::default().truncation_margin_px,
            window_fallback: InitConfig::default().window_fallback,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(CliError::Config(m));
        if let Err(e) = self.scene.validate() {
            return err(e.to_string());
        }
        if let Err(e) = self.noise.validate() {
            return err(e.to_string());
        }
        if let Err(e) = self.solver.validate() {
            return err(e.to_string());
        }
        if self.scenes == 0 || self.seeds_per_scene == 0 {
            return err("scenes and seeds_per_scene must be at least 1".into());
        }
        if self.trials == Some(0) {
            return err("trials must be at least 1".into());
        }
        if self.min_detections < 3 {
            return err("min_detections must be at least 3".into());
        }
        if let Some([w, h]) = self.reject_bbox_std {
            if !(w > 0.0 && h > 0.0) {
                return err("reject_bbox_std limits must be positive".into());
            }
        }
        if self.workers == Some(0) {
            return err("workers must be at least 1".into());
        }
        Ok(())
    }

    pub fn init_config(&self) -> InitConfig {
        InitConfig {
            min_detections: self.min_detections,
            keep_behind_camera: self.keep_behind_camera,
            skip_truncated: self.skip_truncated,
            truncation_margin_px: self.truncation_margin_px,
            window_fallback: self.window_fallback,
        }
    }

    /// Worker count from the environment, then the config, then all cores.
    pub fn resolved_workers(&self) -> Result<usize> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
            Err(_) => Ok(self.workers.unwrap_or_else(rayon::current_num_threads)),
        }
    }

    /// Trial layout `(scene index, seed index)` in emission order.
    pub fn trial_layout(&self) -> Vec<(usize, usize)> {
        let all = (0..self.scenes).flat_map(|s| (0..self.seeds_per_scene).map(move |k| (s, k)));
        all.take(self.trials.unwrap_or(usize::MAX)).collect()
    }

    pub fn scene_seed(&self, scene: usize) -> u64 {
        mix(self.seed, scene as u64)
    }

    pub fn noise_seed(&self, scene: usize, seed_index: usize) -> u64 {
        mix(self.scene_seed(scene), 0x9e37_79b9 + seed_index as u64)
    }
}

/// SplitMix64 finalizer over the pair, so nearby indices get unrelated seeds.
fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_simulation_protocol() {
        let c = ExperimentConfig::default();
        assert_eq!((c.scenes, c.seeds_per_scene), (10, 5));
        assert_eq!(c.trial_layout().len(), 50);
        assert_eq!((c.noise.trans_fraction, c.noise.rot_fraction, c.noise.det_sigma_px), (0.05, 0.15, 2.0));
        c.validate().unwrap();
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: ExperimentConfig = serde_json::from_str(r#"{"scenes": 2, "noise": {"seed": 4}}"#).unwrap();
        assert_eq!(c.scenes, 2);
        assert_eq!(c.noise.trans_fraction, 0.05);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let c = ExperimentConfig {
            seeds_per_scene: 0,
            ..Default::default()
        };
        assert_eq!(c.validate().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn trial_cap_and_distinct_seeds() {
        let c = ExperimentConfig {
            trials: Some(1),
            ..Default::default()
        };
        assert_eq!(c.trial_layout(), vec![(0, 0)]);
        assert_ne!(c.scene_seed(0), c.scene_seed(1));
        assert_ne!(c.noise_seed(0, 0), c.noise_seed(0, 1));
    }
}
