use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::control::{ControllerConfig, ControllerKind};
use crate::diffusion::PredictorConfig;
use crate::guide::GuidanceParams;
use crate::scale::{GeometricScale, RegressorConfig};
use crate::sim::{DatasetConfig, EpisodeConfig, TopoParams, WorldGenParams, WorldKind};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "GROUNDNAV_OUT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleSource {
    /// `v_max / f`.
    Constant,
    /// True waypoint spacing of the training corpus.
    Oracle,
    Geometric,
    Learned,
}

impl ScaleSource {
    pub const ALL: [ScaleSource; 4] = [Self::Constant, Self::Oracle, Self::Geometric, Self::Learned];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Constant => "constant",
            Self::Oracle => "oracle",
            Self::Geometric => "geometric",
            Self::Learned => "learned",
        }
    }
}

impl fmt::Display for ScaleSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScaleSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown scale source `{s}` (expected constant, oracle, geometric or learned)"))
    }
}

/// Worlds, routes and repetitions of one benchmark suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub name: String,
    pub kind: WorldKind,
    /// Overrides the generator preset of `kind`.
    pub world: Option<WorldGenParams>,
    pub worlds: usize,
    pub topomaps: usize,
    pub seeds: usize,
    pub seed: u64,
    pub topo: TopoParams,
    pub episode: EpisodeConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            name: "maze".into(),
            kind: WorldKind::Maze,
            world: None,
            worlds: 20,
            topomaps: 20,
            seeds: 5,
            seed: 0,
            topo: TopoParams::default(),
            episode: EpisodeConfig::default(),
        }
    }
}

impl SuiteConfig {
    /// Pillar-studded suite used for the guidance comparison.
    pub fn dense() -> Self {
        Self {
            name: "dense".into(),
            kind: WorldKind::Dense,
            ..Self::default()
        }
    }

    pub fn world_params(&self) -> WorldGenParams {
        self.world.unwrap_or_else(|| WorldGenParams::for_kind(self.kind))
    }

    pub fn episode_count(&self) -> usize {
        self.worlds * self.topomaps * self.seeds
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PolicyConfig {
    /// Trained noise predictor; a relative path is resolved against the output directory.
    Diffusion { checkpoint: PathBuf },
    /// Route-following expert at `spacing` meters per unit step.
    Expert { spacing: f64 },
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self::Diffusion {
            checkpoint: PathBuf::from("policy.ck"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleConfig {
    pub oracle_spacing: f64,
    pub geometric: GeometricScale,
    pub learned_checkpoint: PathBuf,
}

impl Default for ScaleConfig {
    fn default() -> Self {
        Self {
            oracle_spacing: 0.25,
            geometric: GeometricScale::default(),
            learned_checkpoint: PathBuf::from("scale.ck"),
        }
    }
}

/// Corpora and training runs behind the policy and the scale regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub world: WorldGenParams,
    pub policy_worlds: usize,
    pub policy_world_seed: u64,
    pub policy_data: DatasetConfig,
    pub policy_data_seed: u64,
    pub predictor: PredictorConfig,
    pub scale_worlds: usize,
    pub scale_world_seed: u64,
    pub scale_data: DatasetConfig,
    pub scale_data_seed: u64,
    pub regressor: RegressorConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            world: WorldGenParams::for_kind(WorldKind::Maze),
            policy_worlds: 20,
            policy_world_seed: 1000,
            policy_data: DatasetConfig {
                heading_jitter_deg: 10.0,
                ..DatasetConfig::default()
            },
            policy_data_seed: 5,
            predictor: PredictorConfig {
                epochs: 500,
                learning_rate: 1e-3,
                ..PredictorConfig::default()
            },
            scale_worlds: 20,
            scale_world_seed: 2000,
            scale_data: DatasetConfig::scale_corpus(),
            scale_data_seed: 7,
            regressor: RegressorConfig::default(),
        }
    }
}

/// Parameter grid for the guidance sweep on the demo scene. Each axis is
/// varied with the others held at the configured guidance parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub gammas: Vec<f64>,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.5, 1.0],
            betas: vec![0.001, 0.01, 0.1],
            gammas: vec![0.0, 0.5, 1.0],
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub schema_version: u32,
    /// Falls back to `$GROUNDNAV_OUT`, then `groundnav-out`.
    pub out_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    pub parallelism: usize,
    pub controllers: Vec<ControllerKind>,
    pub scale_sources: Vec<ScaleSource>,
    /// Guidance settings to run; each becomes its own cell.
    pub guidance: Vec<bool>,
    pub guidance_params: GuidanceParams,
    pub control: ControllerConfig,
    pub suite: SuiteConfig,
    pub policy: PolicyConfig,
    pub scale: ScaleConfig,
    pub training: TrainingConfig,
    pub sweep: SweepConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            out_dir: None,
            parallelism: 0,
            controllers: vec![ControllerKind::Velocity, ControllerKind::Position],
            scale_sources: vec![ScaleSource::Oracle],
            guidance: vec![false],
            guidance_params: GuidanceParams {
                collision_horizon: Some(3),
                ..GuidanceParams::default()
            },
            control: ControllerConfig::default(),
            suite: SuiteConfig::default(),
            policy: PolicyConfig::default(),
            scale: ScaleConfig::default(),
            training: TrainingConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let value: toml::Value = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        match value.get("schema_version").and_then(|v| v.as_integer()) {
            Some(v) if v == SCHEMA_VERSION as i64 => {}
            Some(v) => return Err(BenchError::Config(format!("unsupported schema_version {v} (expected {SCHEMA_VERSION})"))),
            None => return Err(BenchError::Config("missing schema_version".into())),
        }
        let config: Self = value.try_into().map_err(|e: toml::de::Error| BenchError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String, BenchError> {
        toml::to_string_pretty(self).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        if self.controllers.is_empty() || self.scale_sources.is_empty() || self.guidance.is_empty() {
            return Err(BenchError::Config("controllers, scale_sources and guidance must be non-empty".into()));
        }
        if self.suite.episode_count() == 0 {
            return Err(BenchError::Config("suite has no episodes".into()));
        }
        self.guidance_params.validate()?;
        Ok(())
    }

    /// Output directory after applying the fallbacks.
    pub fn resolved_out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("groundnav-out"))
    }

    /// `path` as is when absolute, otherwise inside the output directory.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.resolved_out_dir().join(path)
        }
    }
}
