//! Deterministic 2.5D simulator: extruded-wall worlds, a unicycle robot with
//! a disk footprint, ray-cast depth, expert paths and dataset construction.

pub mod context;
pub mod dataset;
pub mod episode;
pub mod expert;
mod render;
mod robot;
pub mod topomap;
mod world;
pub mod worldgen;

pub use render::{render_depth, Camera};
pub use robot::{integrate_unicycle, step, RobotState, StepOutcome, DEFAULT_FOOTPRINT_RADIUS};
pub use dataset::{build_dataset, Dataset, DatasetConfig, DatasetHeader, DatasetRecord};
pub use episode::{
    expert_policy, run_episode, run_episode_traced, DiffusionPolicy, EpisodeConfig, EpisodeMode, EpisodeResult, PolicySource,
    PolicyStack, Termination,
};
pub use expert::{expert_path, ExpertParams, ExpertPath};
pub use topomap::{generate_topomaps, TopoMap, TopoParams};
pub use world::WorldMap;
pub use worldgen::{generate_world, l_corridor, WorldGenParams, WorldKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid world: {0}")]
    InvalidWorld(String),
    #[error("world file line {line}: {msg}")]
    WorldFormat { line: usize, msg: String },
    #[error("no path between {from:?} and {to:?}")]
    NoPath { from: (f64, f64), to: (f64, f64) },
    #[error("malformed dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Traj(#[from] crate::traj::TrajError),
    #[error(transparent)]
    Percept(#[from] crate::percept::PerceptError),
    #[error(transparent)]
    Diffusion(#[from] crate::diffusion::DiffusionError),
    #[error(transparent)]
    Guide(#[from] crate::guide::GuideError),
    #[error(transparent)]
    Scale(#[from] crate::scale::ScaleError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Derives an independent stream seed for item `index` (SplitMix64 finalizer).
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
