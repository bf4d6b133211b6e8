//! Benchmark harness: configuration, training pipeline, seeded episode
//! runner, aggregation, guidance sweeps and SVG figures.

mod config;
mod pipeline;
mod plot;
mod report;
mod runner;
mod scene;
mod sweep;

pub use config::{
    BenchConfig, PolicyConfig, ScaleConfig, ScaleSource, SuiteConfig, SweepConfig, TrainingConfig, OUT_DIR_ENV, SCHEMA_VERSION,
};
pub use pipeline::{
    policy_corpus, policy_worlds, scale_corpus, scale_worlds, suite_worlds, train_policy, train_scale, Resources, SuiteWorld,
    DIFFUSION_STEPS,
};
pub use plot::{box_plot_svg, Metric};
pub use report::{aggregate, CellReport, Summary, SuiteReport};
pub use runner::{cells, episode_seed, read_csv, run_suite, run_suite_on, write_csv, CellKey, EpisodeRow};
pub use scene::{lobby_world, DemoLayout, DemoScene};
pub use sweep::{overlay_svg, row_for, rows_csv, run_sweep, sample_scene, SweepAxis, SweepReport, SweepRow, SweepRun};

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("no episodes to report")]
    Empty,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Guide(#[from] crate::guide::GuideError),
    #[error(transparent)]
    Diffusion(#[from] crate::diffusion::DiffusionError),
    #[error(transparent)]
    Scale(#[from] crate::scale::ScaleError),
    #[error(transparent)]
    Percept(#[from] crate::percept::PerceptError),
    #[error(transparent)]
    Checkpoint(#[from] crate::nn::CheckpointError),
}

impl BenchError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
