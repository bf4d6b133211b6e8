//! DDPM trajectory sampler.
//!
//! Chains start from `A^K ~ N(0, I)` and are denoised down to `A^0` with a
//! pluggable [`NoisePredictor`]. Two predictors ship with the crate: a small
//! trainable MLP ([`MlpPredictor`]) and a closed-form Gaussian-mixture
//! oracle ([`MixtureOracle`]) used to verify the sampler without training.

mod mlp;
mod oracle;
mod schedule;

pub use mlp::{train_predictor, MlpPredictor, PredictorConfig, TrainedPredictor, PREDICTOR_KIND};
pub use oracle::{oracle_predictor, GaussianMixture, MixtureComponent, MixtureOracle};
pub use schedule::{BetaSchedule, NoiseSchedule};

use crate::geom::Vec2;
use crate::traj::NormalizedAction;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("step index {k} outside 1..={max}")]
    InvalidStep { k: usize, max: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("training produced non-finite parameters at step {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Checkpoint(#[from] crate::nn::CheckpointError),
}

/// Conditioning vector handed to the noise predictor.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Context(pub Vec<f64>);

/// Action after `step` rounds of noise addition; unbounded while denoising.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub action: NormalizedAction,
    pub step: usize,
}

/// `eps_theta(A^k, c, k)`.
pub trait NoisePredictor: Send + Sync {
    /// Flattened action length (`2 * T_A`).
    fn action_dim(&self) -> usize;

    /// Predicts noise for `batch` row-major states sharing one context.
    fn predict_batch(&self, states: &[f64], batch: usize, ctx: &Context, k: usize) -> Vec<f64>;

    fn predict(&self, state: &DiffusionState, ctx: &Context) -> Vec<Vec2> {
        let flat = state.action.flatten();
        NormalizedAction::from_flat(&self.predict_batch(&flat, 1, ctx, state.step)).0
    }
}

/// One reverse update for `batch` chains in place; noise is drawn chain-major.
pub fn denoise_batch<R: Rng + ?Sized>(
    states: &mut [f64],
    batch: usize,
    k: usize,
    ctx: &Context,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<(), DiffusionError> {
    denoise_batch_adjusted(states, batch, k, ctx, predictor, schedule, rng, |_| Ok(()))
}

/// Like [`denoise_batch`], but `adjust` may modify the noise-free means
/// `eta * (A^k - gamma * eps)` before the step noise is added.
#[allow(clippy::too_many_arguments)]
pub fn denoise_batch_adjusted<R, F>(
    states: &mut [f64],
    batch: usize,
    k: usize,
    ctx: &Context,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    rng: &mut R,
    adjust: F,
) -> Result<(), DiffusionError>
where
    R: Rng + ?Sized,
    F: FnOnce(&mut [f64]) -> Result<(), DiffusionError>,
{
    if k == 0 || k > schedule.num_steps() {
        return Err(DiffusionError::InvalidStep {
            k,
            max: schedule.num_steps(),
        });
    }
    let eps = predictor.predict_batch(states, batch, ctx, k);
    let (eta, gamma, sigma) = (schedule.eta(k), schedule.gamma(k), schedule.sigma(k));
    for (x, e) in states.iter_mut().zip(&eps) {
        *x = eta * (*x - gamma * e);
    }
    adjust(states)?;
    if sigma > 0.0 {
        for x in states.iter_mut() {
            *x += eta * sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(())
}

/// Single-chain reverse update `A^k → A^{k-1}`.
pub fn denoise_step<R: Rng + ?Sized>(
    state: &DiffusionState,
    ctx: &Context,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<DiffusionState, DiffusionError> {
    let mut flat = state.action.flatten();
    denoise_batch(&mut flat, 1, state.step, ctx, predictor, schedule, rng)?;
    Ok(DiffusionState {
        action: NormalizedAction::from_flat(&flat),
        step: state.step - 1,
    })
}

/// Draws `count` prior states `A^K ~ N(0, I)`, row-major.
pub fn prior_states<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<f64> {
    (0..dim * count).map(|_| rng.sample(StandardNormal)).collect()
}

/// Runs `count` chains from the prior to step 0 without clamping.
///
/// `adjust(k, before, means)` runs for every update at index `k` with the
/// pre-update states and may modify the noise-free means before noise is
/// added.
pub fn run_chains<R, F>(
    ctx: &Context,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    rng: &mut R,
    count: usize,
    adjust: F,
) -> Result<Vec<f64>, DiffusionError>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &[f64], &mut [f64]) -> Result<(), DiffusionError>,
{
    let states = prior_states(predictor.action_dim(), count, rng);
    continue_chains(states, schedule.num_steps(), ctx, predictor, schedule, rng, adjust)
}

/// Continues row-major chain `states` currently at step `from` down to step 0.
pub fn continue_chains<R, F>(
    mut states: Vec<f64>,
    from: usize,
    ctx: &Context,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    rng: &mut R,
    mut adjust: F,
) -> Result<Vec<f64>, DiffusionError>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &[f64], &mut [f64]) -> Result<(), DiffusionError>,
{
    let dim = predictor.action_dim();
    if dim == 0 || states.is_empty() {
        return Ok(states);
    }
    let count = states.len() / dim;
    let mut before = Vec::with_capacity(states.len());
    for k in (1..=from.min(schedule.num_steps())).rev() {
        before.clear();
        before.extend_from_slice(&states);
        denoise_batch_adjusted(&mut states, count, k, ctx, predictor, schedule, rng, |m| adjust(k, &before, m))?;
    }
    Ok(states)
}

/// Splits row-major chain states into actions clamped to `[-1, 1]`.
pub fn finish_actions(states: &[f64], dim: usize) -> Vec<NormalizedAction> {
    states
        .chunks_exact(dim.max(1))
        .map(|row| {
            let clamped: Vec<f64> = row.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
            NormalizedAction::from_flat(&clamped)
        })
        .collect()
}

/// Samples `count` independent actions.
pub fn sample<R: Rng + ?Sized>(
    ctx: &Context,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    rng: &mut R,
    count: usize,
) -> Result<Vec<NormalizedAction>, DiffusionError> {
    let states = run_chains(ctx, predictor, schedule, rng, count, |_, _, _| Ok(()))?;
    Ok(finish_actions(&states, predictor.action_dim()))
}
