use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BetaSchedule, Context, DiffusionError, NoisePredictor, NoiseSchedule};
use crate::nn::{cosine_lr, Activation, AdamW, Checkpoint, Mlp};
use crate::traj::{ActionStats, NormalizedAction};

/// Checkpoint kind tag for trained noise predictors.
pub const PREDICTOR_KIND: &str = "groundnav/noise-predictor";

/// Hyperparameters of the noise predictor and its training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub hidden: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            embed_dim: 16,
            epochs: 60,
            batch_size: 256,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

/// Feedforward `eps_theta` over `[state, context, step embedding]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPredictor {
    net: Mlp,
    action_dim: usize,
    context_dim: usize,
    embed_dim: usize,
    schedule: NoiseSchedule,
    stats: Option<ActionStats>,
}

fn step_embedding(k: usize, dim: usize, out: &mut Vec<f32>) {
    let half = dim / 2;
    for i in 0..half {
        let freq = (-(100f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let a = k as f64 * freq;
        out.push(a.sin() as f32);
        out.push(a.cos() as f32);
    }
    if dim % 2 == 1 {
        out.push(k as f32 / 10.0);
    }
}

impl MlpPredictor {
    pub fn new(action_dim: usize, context_dim: usize, schedule: NoiseSchedule, cfg: &PredictorConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let input = action_dim + context_dim + cfg.embed_dim;
        let net = Mlp::new(&[input, cfg.hidden, cfg.hidden, action_dim], Activation::Silu, &mut rng);
        Self {
            net,
            action_dim,
            context_dim,
            embed_dim: cfg.embed_dim,
            schedule,
            stats: None,
        }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn network(&self) -> &Mlp {
        &self.net
    }

    /// Action statistics the predictor was trained against, if recorded.
    pub fn stats(&self) -> Option<&ActionStats> {
        self.stats.as_ref()
    }

    pub fn with_stats(mut self, stats: ActionStats) -> Self {
        self.stats = Some(stats);
        self
    }

    fn build_input(&self, states: &[f64], batch: usize, ctx: &[f64], k: usize, out: &mut Vec<f32>) {
        out.clear();
        let mut emb = Vec::with_capacity(self.embed_dim);
        step_embedding(k, self.embed_dim, &mut emb);
        for b in 0..batch {
            out.extend(states[b * self.action_dim..(b + 1) * self.action_dim].iter().map(|&v| v as f32));
            out.extend(ctx.iter().map(|&v| v as f32));
            out.extend_from_slice(&emb);
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: PREDICTOR_KIND.to_string(),
            metadata: serde_json::json!({
                "action_dim": self.action_dim,
                "context_dim": self.context_dim,
                "embed_dim": self.embed_dim,
                "schedule": { "kind": self.schedule.kind(), "betas": self.schedule.betas() },
                "stats": self.stats,
            }),
            network: self.net.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, DiffusionError> {
        let meta = &ck.metadata;
        let get = |key: &str| {
            meta.get(key)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize)
                .ok_or_else(|| DiffusionError::Dimension(format!("checkpoint missing `{key}`")))
        };
        let action_dim = get("action_dim")?;
        let context_dim = get("context_dim")?;
        let embed_dim = get("embed_dim")?;
        let betas: Vec<f64> = serde_json::from_value(meta["schedule"]["betas"].clone())
            .map_err(|e| DiffusionError::Dimension(format!("schedule betas: {e}")))?;
        let kind: BetaSchedule = serde_json::from_value(meta["schedule"]["kind"].clone())
            .map_err(|e| DiffusionError::Dimension(format!("schedule kind: {e}")))?;
        let schedule = match kind {
            BetaSchedule::SquaredCosine => NoiseSchedule::squared_cosine(betas.len())?,
            BetaSchedule::Custom => NoiseSchedule::from_betas(betas)?,
        };
        let stats: Option<ActionStats> = serde_json::from_value(meta["stats"].clone()).unwrap_or(None);
        if ck.network.input_dim() != action_dim + context_dim + embed_dim || ck.network.output_dim() != action_dim {
            return Err(DiffusionError::Dimension("network shape does not match metadata".into()));
        }
        Ok(Self {
            net: ck.network,
            action_dim,
            context_dim,
            embed_dim,
            schedule,
            stats,
        })
    }
}

impl NoisePredictor for MlpPredictor {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn predict_batch(&self, states: &[f64], batch: usize, ctx: &Context, k: usize) -> Vec<f64> {
        let mut input = Vec::with_capacity(batch * self.net.input_dim());
        self.build_input(states, batch, &ctx.0, k, &mut input);
        self.net.forward(&input, batch).into_iter().map(f64::from).collect()
    }
}

/// A trained predictor and its per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainedPredictor {
    pub predictor: MlpPredictor,
    pub loss_curve: Vec<f64>,
}

impl TrainedPredictor {
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (i, l) in self.loss_curve.iter().enumerate() {
            s.push_str(&format!("{i},{l}\n"));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(not(test), allow(dead_code))]
pub(crate) enum TargetMode {
    /// Regress the noise that was mixed into the input.
    Injected,
    /// Regress fresh noise unrelated to the input (sanity floor).
    Independent,
}

/// Fits `eps_theta` by minibatch descent on `MSE(eps, eps_theta(A^k, c, k))`.
pub fn train_predictor(
    dataset: &[(NormalizedAction, Context)],
    schedule: &NoiseSchedule,
    config: &PredictorConfig,
) -> Result<TrainedPredictor, DiffusionError> {
    fit(dataset, schedule, config, TargetMode::Injected)
}

pub(crate) fn fit(
    dataset: &[(NormalizedAction, Context)],
    schedule: &NoiseSchedule,
    config: &PredictorConfig,
    mode: TargetMode,
) -> Result<TrainedPredictor, DiffusionError> {
    let (first_action, first_ctx) = dataset.first().ok_or(DiffusionError::EmptyDataset)?;
    let action_dim = first_action.0.len() * 2;
    let context_dim = first_ctx.0.len();
    if dataset
        .iter()
        .any(|(a, c)| a.0.len() * 2 != action_dim || c.0.len() != context_dim)
    {
        return Err(DiffusionError::Dimension("inconsistent example shapes".into()));
    }
    let mut predictor = MlpPredictor::new(action_dim, context_dim, schedule.clone(), config);
    let mut opt = AdamW::new(&predictor.net, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d1ff);
    let batch_size = config.batch_size.max(1).min(dataset.len());
    let steps_per_epoch = dataset.len().div_ceil(batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let flat: Vec<Vec<f64>> = dataset.iter().map(|(a, _)| a.flatten()).collect();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let in_dim = predictor.net.input_dim();
    let mut input: Vec<f32> = Vec::new();
    let mut targets: Vec<f32> = Vec::new();
    let mut emb = Vec::new();
    let mut step = 0;
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch_size) {
            input.clear();
            targets.clear();
            for &idx in chunk {
                let k = rng.random_range(1..=schedule.num_steps());
                let ab = schedule.alpha_bar(k);
                let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
                for &x0 in &flat[idx] {
                    let eps: f64 = rng.sample(StandardNormal);
                    input.push((sa * x0 + sn * eps) as f32);
                    let target = match mode {
                        TargetMode::Injected => eps,
                        TargetMode::Independent => rng.sample(StandardNormal),
                    };
                    targets.push(target as f32);
                }
                input.extend(dataset[idx].1 .0.iter().map(|&v| v as f32));
                emb.clear();
                step_embedding(k, predictor.embed_dim, &mut emb);
                input.extend_from_slice(&emb);
            }
            debug_assert_eq!(input.len(), chunk.len() * in_dim);
            let cache = predictor.net.forward_cached(&input, chunk.len());
            let n = targets.len() as f32;
            let mut loss = 0.0f64;
            let grad: Vec<f32> = cache
                .output()
                .iter()
                .zip(&targets)
                .map(|(p, t)| {
                    let d = p - t;
                    loss += (d as f64) * (d as f64);
                    2.0 * d / n
                })
                .collect();
            epoch_loss += loss / n as f64;
            let grads = predictor.net.backward(&cache, &grad);
            opt.step(&mut predictor.net, &grads, cosine_lr(config.learning_rate, step, total_steps));
            step += 1;
            if !predictor.net.is_finite() {
                return Err(DiffusionError::NonFinite(step));
            }
        }
        loss_curve.push(epoch_loss / steps_per_epoch as f64);
    }
    Ok(TrainedPredictor { predictor, loss_curve })
}
