use std::sync::Arc;

use super::config::{BenchConfig, PolicyConfig, ScaleSource, SuiteConfig, TrainingConfig};
use super::BenchError;
use crate::diffusion::{train_predictor, MlpPredictor, NoiseSchedule, TrainedPredictor, PREDICTOR_KIND};
use crate::nn::Checkpoint;
use crate::scale::{train_scale_regressor, ConstantScale, LearnedScale, ScaleEstimator, ScaleExample, TrainedScale, REGRESSOR_KIND};
use crate::sim::{
    build_dataset, expert_policy, generate_topomaps, generate_world, split_seed, Dataset, DiffusionPolicy, PolicySource, TopoMap,
    WorldMap,
};

const TOPO_STREAM: u64 = 0x7090_u64;

/// Denoising steps of every trained policy.
pub const DIFFUSION_STEPS: usize = 10;

/// One benchmark world with its routes.
#[derive(Debug, Clone)]
pub struct SuiteWorld {
    pub world: WorldMap,
    pub topomaps: Vec<TopoMap>,
}

pub fn suite_worlds(suite: &SuiteConfig) -> Result<Vec<SuiteWorld>, BenchError> {
    let params = suite.world_params();
    (0..suite.worlds)
        .map(|w| {
            let world = generate_world(&format!("{}-{w:02}", suite.name), &params, split_seed(suite.seed, w as u64))?;
            let topomaps = generate_topomaps(&world, suite.topomaps, &suite.topo, split_seed(suite.seed ^ TOPO_STREAM, w as u64))?;
            Ok(SuiteWorld { world, topomaps })
        })
        .collect()
}

fn training_worlds(cfg: &TrainingConfig, prefix: &str, count: usize, seed: u64) -> Result<Vec<WorldMap>, BenchError> {
    (0..count)
        .map(|i| Ok(generate_world(&format!("{prefix}-{i:02}"), &cfg.world, seed + i as u64)?))
        .collect()
}

pub fn policy_worlds(cfg: &TrainingConfig) -> Result<Vec<WorldMap>, BenchError> {
    training_worlds(cfg, "policy", cfg.policy_worlds, cfg.policy_world_seed)
}

pub fn scale_worlds(cfg: &TrainingConfig) -> Result<Vec<WorldMap>, BenchError> {
    training_worlds(cfg, "scale", cfg.scale_worlds, cfg.scale_world_seed)
}

pub fn policy_corpus(cfg: &TrainingConfig) -> Result<Dataset, BenchError> {
    Ok(build_dataset(&policy_worlds(cfg)?, &cfg.policy_data, cfg.policy_data_seed)?)
}

pub fn scale_corpus(cfg: &TrainingConfig) -> Result<Dataset, BenchError> {
    Ok(build_dataset(&scale_worlds(cfg)?, &cfg.scale_data, cfg.scale_data_seed)?)
}

/// Trains the noise predictor on `corpus` and attaches its action statistics.
pub fn train_policy(corpus: &Dataset, cfg: &TrainingConfig) -> Result<TrainedPredictor, BenchError> {
    let pairs = corpus.policy_pairs()?;
    let schedule = NoiseSchedule::squared_cosine(DIFFUSION_STEPS)?;
    let trained = train_predictor(&pairs, &schedule, &cfg.predictor)?;
    Ok(TrainedPredictor {
        predictor: trained.predictor.with_stats(corpus.header.stats),
        loss_curve: trained.loss_curve,
    })
}

pub fn train_scale(corpus: &Dataset, cfg: &TrainingConfig) -> Result<TrainedScale, BenchError> {
    let samples: Vec<_> = corpus
        .records
        .iter()
        .map(|r| Ok(ScaleExample::from_record(r)?.training_sample(cfg.regressor.max_range)))
        .collect::<Result<_, BenchError>>()?;
    Ok(train_scale_regressor(&samples, &cfg.regressor)?)
}

/// Policy and scale estimators shared by every episode of a run.
#[derive(Clone)]
pub struct Resources {
    pub policy: PolicySource,
    pub learned: Option<Arc<dyn ScaleEstimator>>,
}

impl Resources {
    /// Loads whatever `config` needs: the policy checkpoint and, if a learned
    /// scale source is requested, the regressor checkpoint.
    pub fn load(config: &BenchConfig) -> Result<Self, BenchError> {
        let policy = match &config.policy {
            PolicyConfig::Expert { spacing } => expert_policy(*spacing),
            PolicyConfig::Diffusion { checkpoint } => {
                let path = config.resolve(checkpoint);
                let ck = Checkpoint::load(&path, PREDICTOR_KIND).map_err(|e| BenchError::Missing(format!("{}: {e}", path.display())))?;
                PolicySource::Diffusion(DiffusionPolicy::from_mlp(MlpPredictor::from_checkpoint(ck)?)?)
            }
        };
        let learned = if config.scale_sources.contains(&ScaleSource::Learned) {
            let path = config.resolve(&config.scale.learned_checkpoint);
            let ck = Checkpoint::load(&path, REGRESSOR_KIND).map_err(|e| BenchError::Missing(format!("{}: {e}", path.display())))?;
            Some(Arc::new(LearnedScale::from_checkpoint(ck)?) as Arc<dyn ScaleEstimator>)
        } else {
            None
        };
        Ok(Self { policy, learned })
    }

    pub fn estimator(&self, source: ScaleSource, config: &BenchConfig) -> Result<Arc<dyn ScaleEstimator>, BenchError> {
        Ok(match source {
            ScaleSource::Constant => Arc::new(ConstantScale::baseline(config.control.v_max, config.control.frequency)?),
            ScaleSource::Oracle => Arc::new(ConstantScale::oracle(config.scale.oracle_spacing)?),
            ScaleSource::Geometric => Arc::new(config.scale.geometric),
            ScaleSource::Learned => self
                .learned
                .clone()
                .ok_or_else(|| BenchError::Missing("learned scale regressor was not loaded".into()))?,
        })
    }
}
