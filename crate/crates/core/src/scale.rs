//! Metric scale estimation: turning a unit-scale trajectory plus a depth
//! observation into meters per waypoint step.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec2;
use crate::nn::{cosine_lr, Activation, AdamW, Checkpoint, CheckpointError, Mlp};
use crate::percept::DepthFrame;
use crate::sim::DatasetRecord;
use crate::traj::{normalize, segment_scale, Scale, TrajError, Trajectory};

pub const REGRESSOR_KIND: &str = "groundnav/scale-regressor";
/// Loss weight applied to the millimeter-unit squared error.
pub const MM_LOSS_WEIGHT: f64 = 1e-3;
pub const POOL: usize = 8;

#[derive(Debug, Error)]
pub enum ScaleError {
    #[error("depth frame has no pixels")]
    EmptyDepth,
    #[error("no training samples")]
    EmptyDataset,
    #[error("sample {index} has non-positive target {value}")]
    NonPositiveTarget { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("training diverged at step {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Traj(#[from] TrajError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Maps an observation and a unit-scale trajectory to meters per step.
pub trait ScaleEstimator: Send + Sync {
    fn name(&self) -> &str;
    fn estimate(&self, depth: &DepthFrame, unit: &Trajectory) -> Result<Scale, ScaleError>;
}

/// Ground-truth scale of an expert segment.
pub fn oracle_scale(segment: &Trajectory) -> Result<Scale, ScaleError> {
    Ok(segment_scale(segment)?)
}

/// Fixed scale regardless of input.
#[derive(Debug, Clone, Copy)]
pub struct ConstantScale {
    scale: Scale,
    name: &'static str,
}

impl ConstantScale {
    /// The `v_max / f` baseline.
    pub fn baseline(v_max: f64, frequency: f64) -> Result<Self, ScaleError> {
        Ok(Self {
            scale: Scale::constant_baseline(v_max, frequency)?,
            name: "constant",
        })
    }

    /// The true waypoint spacing of the corpus the policy was trained on.
    pub fn oracle(spacing: f64) -> Result<Self, ScaleError> {
        Ok(Self {
            scale: Scale::new(spacing)?,
            name: "oracle",
        })
    }

    pub fn value(&self) -> Scale {
        self.scale
    }
}

impl ScaleEstimator for ConstantScale {
    fn name(&self) -> &str {
        self.name
    }

    fn estimate(&self, depth: &DepthFrame, _unit: &Trajectory) -> Result<Scale, ScaleError> {
        if depth.ranges.is_empty() {
            return Err(ScaleError::EmptyDepth);
        }
        Ok(self.scale)
    }
}

/// `clamp(gain * free range along the initial heading, min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometricScale {
    pub gain: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for GeometricScale {
    fn default() -> Self {
        Self {
            gain: 0.1,
            min: 0.05,
            max: 0.8,
        }
    }
}

/// Horizon-row range in the column nearest `azimuth`; `None` when there is no return.
fn range_along(depth: &DepthFrame, azimuth: f64) -> Option<f64> {
    let k = &depth.intrinsics;
    let px = k.cx - k.fx * azimuth.clamp(-1.5, 1.5).tan();
    let u = (px - 0.5).round().clamp(0.0, (depth.width - 1) as f64) as usize;
    let row = crate::sim::context::horizon_row(depth);
    depth.range(u, row)
}

/// Direction of the first waypoint that leaves the origin.
fn initial_heading(unit: &Trajectory) -> f64 {
    unit.points()
        .iter()
        .find(|p| p.norm() > 1e-9)
        .map_or(0.0, |p| p.angle())
}

pub fn geometric_scale(depth: &DepthFrame, unit: &Trajectory, params: &GeometricScale) -> Result<Scale, ScaleError> {
    if depth.width == 0 || depth.height == 0 || depth.ranges.is_empty() {
        return Err(ScaleError::EmptyDepth);
    }
    let free = range_along(depth, initial_heading(unit)).unwrap_or(f64::INFINITY);
    Ok(Scale::new((params.gain * free).clamp(params.min, params.max))?)
}

impl ScaleEstimator for GeometricScale {
    fn name(&self) -> &str {
        "geometric"
    }

    fn estimate(&self, depth: &DepthFrame, unit: &Trajectory) -> Result<Scale, ScaleError> {
        geometric_scale(depth, unit, self)
    }
}

/// Min-pooled `POOL x POOL` grid of ranges divided by `max_range`
/// (missing returns count as `max_range`).
pub fn depth_features(depth: &DepthFrame, max_range: f64) -> Vec<f64> {
    let mut out = vec![1.0f64; POOL * POOL];
    for v in 0..depth.height {
        let row = v * POOL / depth.height;
        for u in 0..depth.width {
            let col = u * POOL / depth.width;
            let r = depth.range(u, v).map_or(1.0, |r| (r / max_range).min(1.0));
            let cell = &mut out[row * POOL + col];
            *cell = cell.min(r);
        }
    }
    out
}

/// Flattened unit trajectory divided by its horizon.
pub fn action_features(unit: &Trajectory) -> Vec<f64> {
    let h = unit.horizon().max(1) as f64;
    unit.points().iter().flat_map(|p| [p.x / h, p.y / h]).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTrainingSample {
    pub depth_features: Vec<f64>,
    pub action_features: Vec<f64>,
    /// Meters.
    pub target: f64,
}

/// Evaluation input: the raw observation, the unit trajectory and the true scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleExample {
    pub depth: Arc<DepthFrame>,
    pub unit: Trajectory,
    pub target: f64,
}

impl ScaleExample {
    pub fn from_record(record: &DatasetRecord) -> Result<Self, ScaleError> {
        let (deltas, scale) = normalize(&record.trajectory)?;
        Ok(Self {
            depth: Arc::clone(&record.depth),
            unit: crate::traj::integrate(&deltas),
            target: scale.value(),
        })
    }

    pub fn training_sample(&self, max_range: f64) -> ScaleTrainingSample {
        ScaleTrainingSample {
            depth_features: depth_features(&self.depth, max_range),
            action_features: action_features(&self.unit),
            target: self.target,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub weight_decay: f32,
    /// Fraction of samples held out for validation.
    pub validation_fraction: f64,
    pub max_range: f64,
    pub seed: u64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            epochs: 80,
            batch_size: 128,
            learning_rate: 2e-3,
            weight_decay: 1e-4,
            validation_fraction: 0.2,
            max_range: 6.0,
            seed: 0,
        }
    }
}

/// Feedforward regressor with a softplus output head.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedScale {
    net: Mlp,
    max_range: f64,
}

fn softplus(z: f64) -> f64 {
    if z > 20.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl LearnedScale {
    pub fn predict_features(&self, depth: &[f64], action: &[f64]) -> f64 {
        let input: Vec<f32> = depth.iter().chain(action).map(|&v| v as f32).collect();
        softplus(self.net.forward(&input, 1)[0] as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: REGRESSOR_KIND.to_string(),
            metadata: serde_json::json!({ "max_range": self.max_range }),
            network: self.net.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self, ScaleError> {
        let max_range = ck
            .metadata
            .get("max_range")
            .and_then(|v| v.as_f64())
            .ok_or_else(|| ScaleError::Dimension("checkpoint missing `max_range`".into()))?;
        if ck.network.output_dim() != 1 {
            return Err(ScaleError::Dimension("regressor must have one output".into()));
        }
        Ok(Self {
            net: ck.network,
            max_range,
        })
    }
}

impl ScaleEstimator for LearnedScale {
    fn name(&self) -> &str {
        "learned"
    }

    fn estimate(&self, depth: &DepthFrame, unit: &Trajectory) -> Result<Scale, ScaleError> {
        if depth.ranges.is_empty() {
            return Err(ScaleError::EmptyDepth);
        }
        let action = action_features(unit);
        if POOL * POOL + action.len() != self.net.input_dim() {
            return Err(ScaleError::Dimension(format!(
                "regressor expects {} inputs, got {}",
                self.net.input_dim(),
                POOL * POOL + action.len()
            )));
        }
        let phi = self.predict_features(&depth_features(depth, self.max_range), &action);
        // Softplus can underflow to exactly zero for very negative logits.
        Ok(Scale::new(phi.max(1e-6))?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedScale {
    #[serde(skip)]
    pub regressor: Option<LearnedScale>,
    /// Mean training loss per epoch, `1e-3 * MSE` in square millimeters.
    pub loss_curve: Vec<f64>,
    pub validation_mae: f64,
    pub validation_mean_target: f64,
    pub train_count: usize,
    pub validation_count: usize,
}

impl TrainedScale {
    pub fn relative_validation_mae(&self) -> f64 {
        self.validation_mae / self.validation_mean_target
    }
}

/// Deterministic train/validation split: shuffled indices, the first
/// `fraction` of them held out.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5ca1e));
    let held = ((n as f64) * fraction.clamp(0.0, 1.0)).round() as usize;
    let held = held.min(n.saturating_sub(1));
    let train = idx.split_off(held);
    (train, idx)
}

/// Minimizes `1e-3 * MSE(phi_pred, phi_true)` with errors in millimeters.
pub fn train_scale_regressor(samples: &[ScaleTrainingSample], config: &RegressorConfig) -> Result<TrainedScale, ScaleError> {
    let first = samples.first().ok_or(ScaleError::EmptyDataset)?;
    if let Some((index, s)) = samples.iter().enumerate().find(|(_, s)| !(s.target > 0.0)) {
        return Err(ScaleError::NonPositiveTarget { index, value: s.target });
    }
    let in_dim = first.depth_features.len() + first.action_features.len();
    if samples.iter().any(|s| s.depth_features.len() + s.action_features.len() != in_dim) {
        return Err(ScaleError::Dimension("inconsistent feature lengths".into()));
    }
    let (mut train, val) = split_indices(samples.len(), config.validation_fraction, config.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Mlp::new(&[in_dim, config.hidden, config.hidden, 1], Activation::Silu, &mut rng);
    let mut opt = AdamW::new(&net, config.weight_decay);
    let batch_size = config.batch_size.clamp(1, train.len());
    let total = train.len().div_ceil(batch_size) * config.epochs;
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut input = Vec::with_capacity(batch_size * in_dim);
    let mut step = 0;
    for _ in 0..config.epochs {
        train.shuffle(&mut rng);
        let mut epoch = 0.0;
        let mut batches = 0;
        for chunk in train.chunks(batch_size) {
            input.clear();
            for &i in chunk {
                let s = &samples[i];
                input.extend(s.depth_features.iter().chain(&s.action_features).map(|&v| v as f32));
            }
            let cache = net.forward_cached(&input, chunk.len());
            let n = chunk.len() as f64;
            let mut loss = 0.0;
            let grad: Vec<f32> = cache
                .output()
                .iter()
                .zip(chunk)
                .map(|(&z, &i)| {
                    let z = z as f64;
                    let err_mm = 1000.0 * (softplus(z) - samples[i].target);
                    loss += MM_LOSS_WEIGHT * err_mm * err_mm / n;
                    (MM_LOSS_WEIGHT * 2.0 * err_mm * 1000.0 * sigmoid(z) / n) as f32
                })
                .collect();
            let grads = net.backward(&cache, &grad);
            opt.step(&mut net, &grads, cosine_lr(config.learning_rate, step, total));
            step += 1;
            if !net.is_finite() {
                return Err(ScaleError::NonFinite(step));
            }
            epoch += loss;
            batches += 1;
        }
        loss_curve.push(epoch / batches.max(1) as f64);
    }
    let regressor = LearnedScale {
        net,
        max_range: config.max_range,
    };
    let (mut abs, mut sum) = (0.0, 0.0);
    for &i in &val {
        let s = &samples[i];
        abs += (regressor.predict_features(&s.depth_features, &s.action_features) - s.target).abs();
        sum += s.target;
    }
    let nv = val.len().max(1) as f64;
    Ok(TrainedScale {
        regressor: Some(regressor),
        loss_curve,
        validation_mae: abs / nv,
        validation_mean_target: sum / nv,
        train_count: train.len(),
        validation_count: val.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleBucket {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    pub mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleReport {
    pub estimator: String,
    pub count: usize,
    /// Meters.
    pub mae: f64,
    pub mean_target: f64,
    /// Mean of `|pred - true| / true`.
    pub mean_relative_error: f64,
    pub buckets: Vec<ScaleBucket>,
}

const BUCKET_EDGES: [f64; 7] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, f64::INFINITY];

pub fn evaluate_scale(estimator: &dyn ScaleEstimator, examples: &[ScaleExample]) -> Result<ScaleReport, ScaleError> {
    if examples.is_empty() {
        return Err(ScaleError::EmptyDataset);
    }
    let mut buckets: Vec<ScaleBucket> = BUCKET_EDGES
        .windows(2)
        .map(|w| ScaleBucket {
            lower: w[0],
            upper: w[1],
            count: 0,
            mae: 0.0,
        })
        .collect();
    let (mut abs, mut rel, mut sum) = (0.0, 0.0, 0.0);
    for ex in examples {
        let err = (estimator.estimate(&ex.depth, &ex.unit)?.value() - ex.target).abs();
        abs += err;
        rel += err / ex.target;
        sum += ex.target;
        if let Some(b) = buckets.iter_mut().find(|b| ex.target >= b.lower && ex.target < b.upper) {
            b.count += 1;
            b.mae += err;
        }
    }
    for b in &mut buckets {
        if b.count > 0 {
            b.mae /= b.count as f64;
        }
    }
    let n = examples.len() as f64;
    Ok(ScaleReport {
        estimator: estimator.name().to_string(),
        count: examples.len(),
        mae: abs / n,
        mean_target: sum / n,
        mean_relative_error: rel / n,
        buckets,
    })
}

impl ScaleReport {
    /// One row per target bucket: `lower,upper,count,mae`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("lower,upper,count,mae\n");
        for b in &self.buckets {
            let _ = writeln!(s, "{},{},{},{}", b.lower, b.upper, b.count, b.mae);
        }
        s
    }

    pub fn to_json(&self) -> Result<String, ScaleError> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Unit trajectory pointing straight ahead with unit steps.
pub fn straight_unit(horizon: usize) -> Trajectory {
    Trajectory::new((1..=horizon).map(|i| Vec2::new(i as f64, 0.0)).collect()).expect("non-empty")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Pose2, Segment};
    use crate::percept::Intrinsics;
    use crate::sim::{render_depth, Camera, WorldMap};
    use proptest::prelude::*;
    use rand::Rng;

    fn wall_frame(distance: f64) -> DepthFrame {
        let world = WorldMap::new("w", vec![Segment::new(Vec2::new(distance, -20.0), Vec2::new(distance, 20.0))], 2.5).unwrap();
        render_depth(&world, Pose2::new(0.0, 0.0, 0.0), &Camera::default())
    }

    fn empty_frame() -> DepthFrame {
        render_depth(&WorldMap::new("e", vec![], 2.5).unwrap(), Pose2::default(), &Camera::default())
    }

    #[test]
    fn oracle_matches_spacing_and_subsampling() {
        let seg = Trajectory::new((1..=16).map(|i| Vec2::new(0.25 * i as f64, 0.0)).collect()).unwrap();
        assert!((oracle_scale(&seg).unwrap().value() - 0.25).abs() < 1e-12);
        let every_other = Trajectory::new(seg.points().iter().skip(1).step_by(2).copied().collect()).unwrap();
        assert!((oracle_scale(&every_other).unwrap().value() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn oracle_matches_brute_force_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = Vec2::ZERO;
        let mut pts = Vec::new();
        let mut lens = Vec::new();
        for _ in 0..8 {
            let q = p + Vec2::new(rng.random_range(0.0..0.5), rng.random_range(-0.3..0.3));
            lens.push(p.distance(q));
            pts.push(q);
            p = q;
        }
        let expected = lens.iter().sum::<f64>() / lens.len() as f64;
        let got = oracle_scale(&Trajectory::new(pts).unwrap()).unwrap().value();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn geometric_examples() {
        let g = GeometricScale::default();
        let unit = straight_unit(8);
        let near = geometric_scale(&wall_frame(1.0), &unit, &g).unwrap().value();
        // The center columns sit half a pixel off axis: 1 / cos(small angle).
        assert!((near - 0.1).abs() < 1e-3, "{near}");
        assert_eq!(geometric_scale(&empty_frame(), &unit, &g).unwrap().value(), 0.8);
        let mut zero = empty_frame();
        zero.ranges.iter_mut().for_each(|r| *r = 0.0);
        assert_eq!(geometric_scale(&zero, &unit, &g).unwrap().value(), 0.05);
        let empty = DepthFrame {
            width: 0,
            height: 0,
            ranges: vec![],
            intrinsics: Intrinsics::from_hfov(64, 15, 1.8),
            camera_height: 0.3,
        };
        assert!(matches!(geometric_scale(&empty, &unit, &g), Err(ScaleError::EmptyDepth)));
    }

    #[test]
    fn constant_baseline_mae_on_quarter_meter_corpus() {
        let est = ConstantScale::baseline(0.4, 15.0).unwrap();
        let frame = Arc::new(empty_frame());
        let examples: Vec<ScaleExample> = (0..5)
            .map(|_| ScaleExample {
                depth: Arc::clone(&frame),
                unit: straight_unit(8),
                target: 0.25,
            })
            .collect();
        let report = evaluate_scale(&est, &examples).unwrap();
        assert!((report.mae - (0.25 - 0.4 / 15.0)).abs() < 1e-12);
        let oracle = evaluate_scale(&ConstantScale::oracle(0.25).unwrap(), &examples).unwrap();
        assert_eq!(oracle.mae, 0.0);
        assert_eq!(report.buckets[1].count, 5);
        assert!(report.to_csv().starts_with("lower,upper,count,mae\n"));
        assert!(evaluate_scale(&est, &[]).is_err());
    }

    #[test]
    fn constant_target_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<ScaleTrainingSample> = (0..256)
            .map(|_| ScaleTrainingSample {
                depth_features: (0..POOL * POOL).map(|_| rng.random_range(0.0..1.0)).collect(),
                action_features: (0..16).map(|_| rng.random_range(-1.0..1.0)).collect(),
                target: 0.3,
            })
            .collect();
        let cfg = RegressorConfig {
            epochs: 40,
            batch_size: 32,
            ..Default::default()
        };
        let trained = train_scale_regressor(&samples, &cfg).unwrap();
        assert!((trained.validation_mae / 0.3) < 0.05, "{}", trained.validation_mae);
        let r = trained.regressor.unwrap();
        let p = r.predict_features(&samples[0].depth_features, &samples[0].action_features);
        assert!((p - 0.3).abs() < 0.015, "{p}");
        // Smoothed loss does not increase.
        let smooth: Vec<f64> = trained.loss_curve.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        assert!(smooth.last().unwrap() <= smooth.first().unwrap());
    }

    #[test]
    fn training_errors() {
        assert!(matches!(train_scale_regressor(&[], &RegressorConfig::default()), Err(ScaleError::EmptyDataset)));
        let bad = vec![ScaleTrainingSample {
            depth_features: vec![0.0; 4],
            action_features: vec![0.0; 2],
            target: 0.0,
        }];
        assert!(matches!(
            train_scale_regressor(&bad, &RegressorConfig::default()),
            Err(ScaleError::NonPositiveTarget { index: 0, .. })
        ));
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = LearnedScale {
            net: Mlp::new(&[POOL * POOL + 16, 8, 1], Activation::Silu, &mut rng),
            max_range: 6.0,
        };
        let mut buf = Vec::new();
        r.to_checkpoint().write_to(&mut buf).unwrap();
        let back = LearnedScale::from_checkpoint(Checkpoint::read_kind(&mut buf.as_slice(), REGRESSOR_KIND).unwrap()).unwrap();
        assert_eq!(back, r);
        let s = back.estimate(&wall_frame(2.0), &straight_unit(8)).unwrap();
        assert!(s.value() > 0.0);
    }

    proptest! {
        #[test]
        fn geometric_monotone_and_positive(d1 in 0.3f64..5.9, d2 in 0.3f64..5.9) {
            let g = GeometricScale::default();
            let unit = straight_unit(8);
            let (lo, hi) = if d1 < d2 { (d1, d2) } else { (d2, d1) };
            let a = geometric_scale(&wall_frame(lo), &unit, &g).unwrap().value();
            let b = geometric_scale(&wall_frame(hi), &unit, &g).unwrap().value();
            prop_assert!(a <= b);
            prop_assert!(a > 0.0 && a.is_finite());
        }
    }
}
