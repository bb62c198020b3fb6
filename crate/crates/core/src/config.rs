//! Experiment configuration with explicit defaults and validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::accumulate::StrategyKind;
use crate::camera::Intrinsics;
use crate::depth_noise::DepthNoiseModel;
use crate::error::{DevisError, Result};
use crate::grpo_train::TrainConfig;
use crate::reward::RewardConfig;
use crate::scene::{build_scene, default_source_pose, Difficulty, SceneView};

pub const RESOLUTIONS: [usize; 3] = [32, 64, 128];
pub const MIN_FRAMES: usize = 4;
pub const MAX_FRAMES: usize = 16;

fn cfg_err(msg: impl Into<String>) -> DevisError {
    DevisError::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    /// Square frame size in pixels.
    pub resolution: usize,
    pub n_frames: usize,
    pub fov_deg: f64,
    pub camera_distance: f64,
    pub camera_elevation_deg: f64,
    pub difficulty: Difficulty,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self { resolution: 64, n_frames: 8, fov_deg: 60.0, camera_distance: 6.0, camera_elevation_deg: 20.0, difficulty: Difficulty::Simple }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !RESOLUTIONS.contains(&self.resolution) {
            return Err(cfg_err(format!("resolution must be one of {RESOLUTIONS:?}, got {}", self.resolution)));
        }
        if !(MIN_FRAMES..=MAX_FRAMES).contains(&self.n_frames) {
            return Err(cfg_err(format!("n_frames must lie in [{MIN_FRAMES}, {MAX_FRAMES}], got {}", self.n_frames)));
        }
        if !(self.fov_deg > 1.0 && self.fov_deg < 170.0) {
            return Err(cfg_err("fov_deg must lie in (1, 170)"));
        }
        if !(self.camera_distance > 0.5 && self.camera_distance.is_finite()) {
            return Err(cfg_err("camera_distance must exceed 0.5"));
        }
        if !(self.camera_elevation_deg.abs() < 89.0) {
            return Err(cfg_err("camera_elevation_deg must lie in (-89, 89)"));
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_fov(self.resolution, self.resolution, self.fov_deg)
    }

    pub fn view(&self, scene_seed: u64) -> SceneView {
        SceneView {
            scene: build_scene(scene_seed, self.difficulty),
            intrinsics: self.intrinsics(),
            source_pose: default_source_pose(self.camera_distance, self.camera_elevation_deg),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionConfig {
    pub azimuth_min_deg: f64,
    pub azimuth_max_deg: f64,
    /// Azimuth used by single-step inference during evaluation.
    pub inference_azimuth_deg: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self { azimuth_min_deg: 90.0, azimuth_max_deg: 180.0, inference_azimuth_deg: 120.0 }
    }
}

impl MotionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.azimuth_min_deg.is_finite() && self.azimuth_max_deg.is_finite()) || self.azimuth_min_deg > self.azimuth_max_deg {
            return Err(cfg_err("azimuth range must be finite and ordered"));
        }
        if self.azimuth_min_deg < 0.0 || self.azimuth_max_deg > 180.0 {
            return Err(cfg_err("azimuth range must lie within [0, 180] degrees"));
        }
        if !self.inference_azimuth_deg.is_finite() {
            return Err(cfg_err("inference_azimuth_deg must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    pub output_dir: String,
    pub scene: SceneConfig,
    pub motion: MotionConfig,
    /// Queries written by `synth` (the evaluation set).
    pub n_queries: usize,
    /// Training queries, drawn from scene seeds disjoint from the evaluation set.
    pub n_train_queries: usize,
    pub strategy: StrategyKind,
    pub n_steps: usize,
    pub noise: DepthNoiseModel,
    pub reward: RewardConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            master_seed: 0,
            output_dir: "runs/default".into(),
            scene: SceneConfig::default(),
            motion: MotionConfig::default(),
            n_queries: 10,
            n_train_queries: 8,
            strategy: StrategyKind::Bta { m: 3 },
            n_steps: 3,
            noise: DepthNoiseModel::default(),
            reward: RewardConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.motion.validate()?;
        if self.n_steps < 1 {
            return Err(cfg_err("n_steps must be at least 1"));
        }
        if self.n_train_queries < 1 {
            return Err(cfg_err("n_train_queries must be at least 1"));
        }
        let nested = |r: Result<()>| r.map_err(|e| cfg_err(e.to_string()));
        nested(self.strategy.validate())?;
        nested(self.noise.validate())?;
        nested(self.reward.validate())?;
        nested(self.train.validate())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Scene seed of evaluation query `i`.
    pub fn eval_scene_seed(&self, i: usize) -> u64 {
        derive_seed(self.master_seed, 0xE7A1, i as u64)
    }

    /// Scene seed of training query `i`; disjoint stream from evaluation seeds.
    pub fn train_scene_seed(&self, i: usize) -> u64 {
        derive_seed(self.master_seed, 0x7A1E, i as u64)
    }

    pub fn noise_seed(&self) -> u64 {
        derive_seed(self.master_seed, 0x401E, self.noise.seed)
    }

    pub fn train_seed(&self) -> u64 {
        derive_seed(self.master_seed, 0x6790, self.train.seed)
    }
}

/// SplitMix-style mixing of a master seed with a domain tag and index.
pub fn derive_seed(master: u64, domain: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(domain.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
