//! Cost-guided sampling: collision and goal costs on metric trajectories,
//! gradient steps on the last denoising updates, goal election by spherical
//! k-means and the final goal/clearance trade-off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{
    continue_chains, finish_actions, prior_states, Context, DiffusionError, DiffusionState, NoisePredictor,
    NoiseSchedule,
};
use crate::geom::Vec2;
use crate::percept::Tsdf;
use crate::traj::{integrate, stats_denormalize, ActionStats, NormalizedAction, Trajectory, DEFAULT_HORIZON};

#[derive(Debug, Error)]
pub enum GuideError {
    #[error("waypoint {waypoint} of sample {sample} is at the origin")]
    DegenerateDirections { sample: usize, waypoint: usize },
    #[error("{samples} samples cannot form {clusters} clusters")]
    TooFewSamples { samples: usize, clusters: usize },
    #[error("invalid guidance parameters: {0}")]
    InvalidParams(String),
    #[error("guidance produced a non-finite state")]
    NonFinite,
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
}

/// How the goal-guided second batch is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SecondLoop {
    /// Fresh chains from the prior.
    #[default]
    Resample,
    /// Continue the first batch from the step where guidance starts.
    ReuseTail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceParams {
    /// Goal cost weight.
    pub goal_weight: f64,
    /// Collision cost weight.
    pub collision_weight: f64,
    /// Gradient step size.
    pub step_size: f64,
    /// Guidance runs on updates with step index `k <= active_steps`.
    pub active_steps: usize,
    /// 1-based waypoint whose direction represents a trajectory.
    pub direction_index: usize,
    /// Final selection trade-off: 1 = goal only, 0 = clearance only.
    pub selection_weight: f64,
    pub clusters: usize,
    pub restarts: usize,
    pub samples: usize,
    pub second_loop: SecondLoop,
    /// Waypoints counted by the collision cost; all of them when unset.
    pub collision_horizon: Option<usize>,
}

impl Default for GuidanceParams {
    fn default() -> Self {
        Self {
            goal_weight: 0.5,
            collision_weight: 0.01,
            step_size: 0.1,
            active_steps: 2,
            direction_index: DEFAULT_HORIZON,
            selection_weight: 0.5,
            clusters: 3,
            restarts: 10,
            samples: 8,
            second_loop: SecondLoop::Resample,
            collision_horizon: None,
        }
    }
}

impl GuidanceParams {
    pub fn validate(&self) -> Result<(), GuideError> {
        if !(0.0..=1.0).contains(&self.selection_weight) {
            return Err(GuideError::InvalidParams(format!("selection weight {}", self.selection_weight)));
        }
        if !(self.step_size >= 0.0) || !self.goal_weight.is_finite() || !self.collision_weight.is_finite() {
            return Err(GuideError::InvalidParams("weights and step size must be finite, step size >= 0".into()));
        }
        if self.samples == 0 || self.clusters == 0 || self.direction_index == 0 || self.collision_horizon == Some(0) {
            return Err(GuideError::InvalidParams("samples, clusters and direction index must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotFootprint {
    /// Offset of the left/right boundary points from the centerline.
    pub half_width: f64,
}

impl Default for RobotFootprint {
    fn default() -> Self {
        Self { half_width: 0.17 }
    }
}

/// A cost and its gradient with respect to each waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostGrad {
    pub cost: f64,
    pub gradient: Vec<Vec2>,
}

/// `tau_free - tsdf(p)` and its gradient.
fn point_cost(tsdf: &Tsdf, p: Vec2) -> (f64, Vec2) {
    let s = tsdf.value_grad(p);
    (tsdf.tau_free() - s.value, -s.gradient)
}

/// Unit left normal of `d`, and the transpose of its Jacobian applied to `g`.
fn normal_and_pullback(d: Vec2, g: Vec2) -> (Vec2, Vec2) {
    let len = d.norm();
    let u = d * (1.0 / len);
    let n = u.perp();
    // dn/dd = R (I - u u^T) / |d| with R the +90 degree rotation.
    let rtg = Vec2::new(g.y, -g.x);
    let proj = rtg - u * u.dot(rtg);
    (n, proj * (1.0 / len))
}

/// Sum over waypoints of the cost at the waypoint and at its left and right
/// boundary points, offset perpendicular to the incoming segment.
pub fn collision_cost(traj: &Trajectory, tsdf: &Tsdf, footprint: &RobotFootprint) -> CostGrad {
    collision_cost_within(traj, tsdf, footprint, None)
}

/// [`collision_cost`] over the first `horizon` waypoints only; later
/// waypoints get zero gradient.
pub fn collision_cost_within(traj: &Trajectory, tsdf: &Tsdf, footprint: &RobotFootprint, horizon: Option<usize>) -> CostGrad {
    let pts = traj.points();
    let limit = horizon.map_or(pts.len(), |h| h.min(pts.len()));
    let h = footprint.half_width;
    let mut cost = 0.0;
    let mut grad = vec![Vec2::ZERO; pts.len()];
    let mut prev_normal = Vec2::new(0.0, 1.0);
    for t in 0..limit {
        let a = pts[t];
        let prev = if t == 0 { Vec2::ZERO } else { pts[t - 1] };
        let d = a - prev;
        let (c, g) = point_cost(tsdf, a);
        cost += c;
        grad[t] += g;
        if d.norm() < 1e-12 {
            // No defined heading: reuse the previous normal, treated as constant.
            for side in [1.0, -1.0] {
                let (c, g) = point_cost(tsdf, a + prev_normal * (side * h));
                cost += c;
                grad[t] += g;
            }
            continue;
        }
        for side in [1.0, -1.0] {
            let n = d.normalized().expect("nonzero").perp();
            let (c, g) = point_cost(tsdf, a + n * (side * h));
            cost += c;
            let (_, pull) = normal_and_pullback(d, g);
            let via_normal = pull * (side * h);
            grad[t] += g + via_normal;
            if t > 0 {
                grad[t - 1] -= via_normal;
            }
        }
        prev_normal = d.normalized().expect("nonzero").perp();
    }
    CostGrad { cost, gradient: grad }
}

/// Cosine similarity between `goal` and waypoint `index` (0 when either is zero).
pub fn goal_similarity(traj: &Trajectory, goal: Vec2, index: usize) -> f64 {
    let a = traj.waypoint(index.min(traj.horizon()));
    let (na, ng) = (a.norm(), goal.norm());
    if na < 1e-12 || ng < 1e-12 {
        0.0
    } else {
        a.dot(goal) / (na * ng)
    }
}

/// `1 - cos(goal, waypoint index)`; only that waypoint receives gradient.
pub fn goal_cost(traj: &Trajectory, goal: Vec2, index: usize) -> CostGrad {
    let idx = index.min(traj.horizon());
    let mut gradient = vec![Vec2::ZERO; traj.horizon()];
    let a = traj.waypoint(idx);
    let (na, ng) = (a.norm(), goal.norm());
    if na < 1e-12 || ng < 1e-12 || idx == 0 {
        return CostGrad { cost: 1.0, gradient };
    }
    let (ah, gh) = (a * (1.0 / na), goal * (1.0 / ng));
    let cos = ah.dot(gh);
    gradient[idx - 1] = -(gh - ah * cos) * (1.0 / na);
    CostGrad {
        cost: 1.0 - cos,
        gradient,
    }
}

pub fn total_cost(traj: &Trajectory, tsdf: &Tsdf, goal: Vec2, footprint: &RobotFootprint, params: &GuidanceParams) -> CostGrad {
    let g = goal_cost(traj, goal, params.direction_index);
    let c = collision_cost_within(traj, tsdf, footprint, params.collision_horizon);
    CostGrad {
        cost: params.goal_weight * g.cost + params.collision_weight * c.cost,
        gradient: g
            .gradient
            .iter()
            .zip(&c.gradient)
            .map(|(&a, &b)| a * params.goal_weight + b * params.collision_weight)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalElection {
    pub chosen: usize,
    /// Unit centers, enumerated by their lowest member index.
    pub centers: Vec<Vec2>,
    pub populations: Vec<usize>,
    pub assignments: Vec<usize>,
}

impl GoalElection {
    pub fn goal_direction(&self, samples: &[Trajectory], index: usize) -> Vec2 {
        samples[self.chosen].waypoint(index.min(samples[self.chosen].horizon()))
    }
}

fn assign(dirs: &[Vec2], centers: &[Vec2]) -> Vec<usize> {
    dirs.iter()
        .map(|d| {
            let mut best = 0;
            for (c, center) in centers.iter().enumerate() {
                if d.dot(*center) > d.dot(centers[best]) {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Spherical k-means on the directions of waypoint `index`; the sample most
/// aligned with the most populated center wins.
///
/// Directions are processed in a canonical angular order so the result does
/// not depend on the order of `samples`. Initialization picks distinct
/// directions k-means++ style, so fewer than `clusters` distinct directions
/// give that many clusters.
pub fn elect_goal(samples: &[Trajectory], index: usize, clusters: usize, restarts: usize, seed: u64) -> Result<GoalElection, GuideError> {
    if samples.len() < clusters || clusters == 0 {
        return Err(GuideError::TooFewSamples {
            samples: samples.len(),
            clusters,
        });
    }
    let mut dirs = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let w = s.waypoint(index.min(s.horizon()));
        dirs.push(w.normalized().filter(|_| index > 0).ok_or(GuideError::DegenerateDirections { sample: i, waypoint: index })?);
    }
    let mut order: Vec<usize> = (0..dirs.len()).collect();
    order.sort_by(|&a, &b| dirs[a].angle().total_cmp(&dirs[b].angle()).then(a.cmp(&b)));
    let canon: Vec<Vec2> = order.iter().map(|&i| dirs[i]).collect();
    let mut distinct: Vec<Vec2> = Vec::new();
    for d in &canon {
        if distinct.last().is_none_or(|l: &Vec2| (*l - *d).norm() > 1e-12) {
            distinct.push(*d);
        }
    }
    let k = clusters.min(distinct.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<Vec2>, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let mut centers = vec![distinct[rng.random_range(0..distinct.len())]];
        while centers.len() < k {
            let weights: Vec<f64> = distinct
                .iter()
                .map(|d| centers.iter().map(|c| 1.0 - d.dot(*c)).fold(f64::INFINITY, f64::min).max(0.0))
                .collect();
            let total: f64 = weights.iter().sum();
            let pick = if total > 0.0 {
                let mut r = rng.random_range(0.0..total);
                let mut pick = distinct.len() - 1;
                for (i, w) in weights.iter().enumerate() {
                    if r < *w {
                        pick = i;
                        break;
                    }
                    r -= w;
                }
                pick
            } else {
                0
            };
            centers.push(distinct[pick]);
        }
        let mut labels = assign(&canon, &centers);
        for _ in 0..100 {
            for (c, center) in centers.iter_mut().enumerate() {
                let sum = canon
                    .iter()
                    .zip(&labels)
                    .filter(|(_, &l)| l == c)
                    .fold(Vec2::ZERO, |acc, (d, _)| acc + *d);
                if let Some(n) = sum.normalized() {
                    *center = n;
                }
            }
            let next = assign(&canon, &centers);
            if next == labels {
                break;
            }
            labels = next;
        }
        let objective: f64 = canon.iter().zip(&labels).map(|(d, &l)| d.dot(centers[l])).sum();
        if best.as_ref().is_none_or(|(b, _, _)| objective > *b + 1e-12) {
            best = Some((objective, centers, labels));
        }
    }
    let (_, centers, labels) = best.expect("at least one restart");
    // Relabel clusters by their lowest original sample index.
    let mut by_sample = vec![0usize; samples.len()];
    for (pos, &orig) in order.iter().enumerate() {
        by_sample[orig] = labels[pos];
    }
    let mut remap: Vec<Option<usize>> = vec![None; centers.len()];
    let mut ordered_centers = Vec::new();
    for &l in &by_sample {
        if remap[l].is_none() {
            remap[l] = Some(ordered_centers.len());
            ordered_centers.push(centers[l]);
        }
    }
    let assignments: Vec<usize> = by_sample.iter().map(|&l| remap[l].expect("seen")).collect();
    let mut populations = vec![0usize; ordered_centers.len()];
    for &a in &assignments {
        populations[a] += 1;
    }
    // Population ties go to the cluster holding the earliest direction in
    // angular order, which keeps the choice independent of sample order.
    let mut first_pos = vec![usize::MAX; ordered_centers.len()];
    for (pos, &orig) in order.iter().enumerate() {
        let c = assignments[orig];
        first_pos[c] = first_pos[c].min(pos);
    }
    let top = (0..populations.len())
        .min_by_key(|&c| (std::cmp::Reverse(populations[c]), first_pos[c]))
        .expect("at least one cluster");
    let target = ordered_centers[top];
    // Scan in angular order so equally aligned samples resolve the same way
    // for any input order; identical directions fall back to the lowest index.
    let chosen = order.iter().copied().fold(order[0], |b, i| {
        if dirs[i].dot(target) > dirs[b].dot(target) + 1e-12 {
            i
        } else {
            b
        }
    });
    Ok(GoalElection {
        chosen,
        centers: ordered_centers,
        populations,
        assignments,
    })
}

/// Index maximizing `gamma * cos(goal) - (1 - gamma) * collision cost`;
/// ties go to the lowest index.
pub fn select_action(
    samples: &[Trajectory],
    tsdf: &Tsdf,
    goal: Vec2,
    gamma: f64,
    footprint: &RobotFootprint,
    index: usize,
    collision_horizon: Option<usize>,
) -> usize {
    let scores: Vec<f64> = samples
        .iter()
        .map(|s| {
            gamma * goal_similarity(s, goal, index)
                - (1.0 - gamma) * collision_cost_within(s, tsdf, footprint, collision_horizon).cost
        })
        .collect();
    (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b })
}

/// What guidance needs besides the chain state.
pub struct GuidanceScene<'a> {
    pub tsdf: &'a Tsdf,
    pub goal: Vec2,
    pub stats: ActionStats,
    pub footprint: RobotFootprint,
    /// Meters per unit step for a unit trajectory.
    pub scale: &'a (dyn Fn(&Trajectory) -> f64 + Sync),
}

fn metric_of(state: &[f64], stats: &ActionStats, scale: f64) -> Trajectory {
    let unit = integrate(&stats_denormalize(&NormalizedAction::from_flat(state), stats));
    Trajectory::new(unit.points().iter().map(|&p| p * scale).collect()).unwrap_or(unit)
}

fn unit_of(state: &[f64], stats: &ActionStats) -> Trajectory {
    integrate(&stats_denormalize(&NormalizedAction::from_flat(state), stats))
}

/// One chain's guidance trace entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub pass: usize,
    pub k: usize,
    pub chain: usize,
    pub total_cost: f64,
    pub goal_cost: f64,
    pub collision_cost: f64,
    /// Metric gradient per waypoint.
    pub gradient: Vec<[f64; 2]>,
}

/// `dF/dstate` for one chain: the metric gradient pulled back through
/// scaling, denormalization and cumulative summation.
pub fn state_gradient(state: &[f64], scene: &GuidanceScene<'_>, params: &GuidanceParams) -> (CostGrad, Vec<f64>) {
    let scale = (scene.scale)(&unit_of(state, &scene.stats));
    let metric = metric_of(state, &scene.stats, scale);
    let cg = total_cost(&metric, scene.tsdf, scene.goal, &scene.footprint, params);
    let span = scene.stats.half_span();
    let mut out = vec![0.0; state.len()];
    let mut tail = Vec2::ZERO;
    for t in (0..cg.gradient.len()).rev() {
        tail += cg.gradient[t];
        out[2 * t] = scale * span.x * tail.x;
        out[2 * t + 1] = scale * span.y * tail.y;
    }
    (cg, out)
}

fn guide_batch(
    pass: usize,
    k: usize,
    before: &[f64],
    means: &mut [f64],
    scene: &GuidanceScene<'_>,
    params: &GuidanceParams,
    trace: &mut Option<&mut Vec<TraceStep>>,
) -> Result<(), DiffusionError> {
    if k > params.active_steps || params.step_size == 0.0 {
        return Ok(());
    }
    let dim = 2 * scene_horizon(before.len(), means.len());
    for (chain, (b, m)) in before.chunks_exact(dim).zip(means.chunks_exact_mut(dim)).enumerate() {
        let (cg, g) = state_gradient(b, scene, params);
        for (x, gx) in m.iter_mut().zip(&g) {
            *x -= params.step_size * gx;
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(DiffusionError::Dimension("guidance produced a non-finite state".into()));
        }
        if let Some(t) = trace.as_deref_mut() {
            let scale = (scene.scale)(&unit_of(b, &scene.stats));
            let metric = metric_of(b, &scene.stats, scale);
            t.push(TraceStep {
                pass,
                k,
                chain,
                total_cost: cg.cost,
                goal_cost: goal_cost(&metric, scene.goal, params.direction_index).cost,
                collision_cost: collision_cost_within(&metric, scene.tsdf, &scene.footprint, params.collision_horizon).cost,
                gradient: cg.gradient.iter().map(|v| [v.x, v.y]).collect(),
            });
        }
    }
    Ok(())
}

// Chains are row-major with equal length; all callers pass whole batches.
fn scene_horizon(before_len: usize, means_len: usize) -> usize {
    debug_assert_eq!(before_len, means_len);
    DEFAULT_HORIZON.min(before_len / 2).max(1)
}

/// One reverse update followed by `-mu * grad F_total` evaluated at the
/// pre-update state (only inside the guidance window).
pub fn guided_denoise_step<R: Rng + ?Sized>(
    state: &DiffusionState,
    ctx: &Context,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    scene: &GuidanceScene<'_>,
    params: &GuidanceParams,
    rng: &mut R,
) -> Result<DiffusionState, GuideError> {
    let flat = state.action.flatten();
    let before = flat.clone();
    let mut states = flat;
    let dim = states.len();
    crate::diffusion::denoise_batch_adjusted(&mut states, 1, state.step, ctx, predictor, schedule, rng, |m| {
        if state.step > params.active_steps || params.step_size == 0.0 {
            return Ok(());
        }
        let (_, g) = state_gradient(&before[..dim], scene, params);
        for (x, gx) in m.iter_mut().zip(&g) {
            *x -= params.step_size * gx;
        }
        Ok(())
    })?;
    if states.iter().any(|v| !v.is_finite()) {
        return Err(GuideError::NonFinite);
    }
    Ok(DiffusionState {
        action: NormalizedAction::from_flat(&states),
        step: state.step - 1,
    })
}

/// Result of the two-pass guided sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidedOutcome {
    /// Metric trajectories of the first (unguided) pass.
    pub first_pass: Vec<Trajectory>,
    pub election: GoalElection,
    /// Goal direction taken from the elected sample.
    pub goal: Vec2,
    /// Metric trajectories of the guided pass.
    pub samples: Vec<Trajectory>,
    pub chosen: usize,
    pub trace: Vec<TraceStep>,
}

impl GuidedOutcome {
    pub fn chosen_trajectory(&self) -> &Trajectory {
        &self.samples[self.chosen]
    }
}

/// Samples a batch, elects a goal direction from it, samples a second batch
/// guided by goal and collision costs, then picks one trajectory.
///
/// `scene.goal` is ignored; the elected direction replaces it.
#[allow(clippy::too_many_arguments)]
pub fn guided_sample<R: Rng + ?Sized>(
    ctx: &Context,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    scene: &GuidanceScene<'_>,
    params: &GuidanceParams,
    rng: &mut R,
    election_seed: u64,
    record_trace: bool,
) -> Result<GuidedOutcome, GuideError> {
    params.validate()?;
    let dim = predictor.action_dim();
    let count = params.samples;
    let window = params.active_steps.min(schedule.num_steps());
    let mut states = prior_states(dim, count, rng);
    let mut saved = None;
    let k_max = schedule.num_steps();
    // First pass: stop at the start of the guidance window to allow reuse.
    states = continue_chains_range(states, k_max, window, ctx, predictor, schedule, rng)?;
    if params.second_loop == SecondLoop::ReuseTail {
        saved = Some(states.clone());
    }
    states = continue_chains(states, window, ctx, predictor, schedule, rng, |_, _, _| Ok(()))?;
    let finish = |states: &[f64]| -> Vec<Trajectory> {
        finish_actions(states, dim)
            .iter()
            .map(|a| {
                let flat = a.flatten();
                let unit = unit_of(&flat, &scene.stats);
                metric_of(&flat, &scene.stats, (scene.scale)(&unit))
            })
            .collect()
    };
    let first_pass = finish(&states);
    let election = elect_goal(&first_pass, params.direction_index, params.clusters.min(count), params.restarts, election_seed)?;
    let goal = election.goal_direction(&first_pass, params.direction_index);
    let guided_scene = GuidanceScene {
        tsdf: scene.tsdf,
        goal,
        stats: scene.stats,
        footprint: scene.footprint,
        scale: scene.scale,
    };
    let mut trace = Vec::new();
    let mut trace_ref = if record_trace { Some(&mut trace) } else { None };
    let second = match saved {
        Some(tail) => tail,
        None => continue_chains_range(prior_states(dim, count, rng), k_max, window, ctx, predictor, schedule, rng)?,
    };
    let second = continue_chains(second, window, ctx, predictor, schedule, rng, |k, before, means| {
        guide_batch(1, k, before, means, &guided_scene, params, &mut trace_ref)
    })?;
    if second.iter().any(|v| !v.is_finite()) {
        return Err(GuideError::NonFinite);
    }
    let samples = finish(&second);
    let chosen = select_action(
        &samples,
        scene.tsdf,
        goal,
        params.selection_weight,
        &scene.footprint,
        params.direction_index,
        params.collision_horizon,
    );
    Ok(GuidedOutcome {
        first_pass,
        election,
        goal,
        samples,
        chosen,
        trace,
    })
}

/// Runs updates `from, from-1, ..., to+1`, leaving chains at step `to`.
fn continue_chains_range<R: Rng + ?Sized>(
    mut states: Vec<f64>,
    from: usize,
    to: usize,
    ctx: &Context,
    predictor: &dyn NoisePredictor,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>, DiffusionError> {
    let dim = predictor.action_dim();
    let count = states.len() / dim.max(1);
    for k in (to + 1..=from).rev() {
        crate::diffusion::denoise_batch(&mut states, count, k, ctx, predictor, schedule, rng)?;
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::percept::TsdfParams;
    use proptest::prelude::*;
    use rand::Rng;

    /// Point obstacle at `obs` on a default-resolution lattice around the origin.
    fn scene_tsdf(obstacles: &[Vec2]) -> Tsdf {
        let params = TsdfParams::default();
        let (nx, ny) = params.dims();
        let origin = params.origin();
        let mut occ = vec![false; nx * ny];
        for o in obstacles {
            let i = ((o.x - origin.x) / params.resolution).round() as usize;
            let j = ((o.y - origin.y) / params.resolution).round() as usize;
            occ[j * nx + i] = true;
        }
        Tsdf::from_occupancy(&occ, nx, ny, origin, &params).unwrap()
    }

    fn straight(y: f64) -> Trajectory {
        Trajectory::new((1..=8).map(|i| Vec2::new(0.25 * i as f64, y)).collect()).unwrap()
    }

    /// Independent bilinear lookup straight from the node values.
    fn bilinear(tsdf: &Tsdf, p: Vec2) -> f64 {
        let (nx, ny) = tsdf.dims();
        let o = tsdf.origin();
        let r = tsdf.resolution();
        let fx = ((p.x - o.x) / r).clamp(0.0, (nx - 1) as f64);
        let fy = ((p.y - o.y) / r).clamp(0.0, (ny - 1) as f64);
        let (i, j) = ((fx.floor() as usize).min(nx - 2), (fy.floor() as usize).min(ny - 2));
        let (tx, ty) = (fx - i as f64, fy - j as f64);
        let v = |a: usize, b: usize| tsdf.node(a, b);
        v(i, j) * (1.0 - tx) * (1.0 - ty) + v(i + 1, j) * tx * (1.0 - ty) + v(i, j + 1) * (1.0 - tx) * ty + v(i + 1, j + 1) * tx * ty
    }

    fn brute_collision(traj: &Trajectory, tsdf: &Tsdf, h: f64) -> f64 {
        let mut prev = Vec2::ZERO;
        let mut total = 0.0;
        for &a in traj.points() {
            let d = a - prev;
            let n = Vec2::new(-d.y, d.x) * (1.0 / d.norm());
            for p in [a, a + n * h, a - n * h] {
                total += tsdf.tau_free() - bilinear(tsdf, p);
            }
            prev = a;
        }
        total
    }

    fn fd_check(f: impl Fn(&Trajectory) -> CostGrad, traj: &Trajectory, tol: f64) -> bool {
        let base = f(traj);
        let h = 1e-6;
        for t in 0..traj.horizon() {
            for axis in 0..2 {
                let bump = |s: f64| {
                    let mut pts = traj.points().to_vec();
                    if axis == 0 {
                        pts[t].x += s;
                    } else {
                        pts[t].y += s;
                    }
                    f(&Trajectory::new(pts).unwrap()).cost
                };
                let fd = (bump(h) - bump(-h)) / (2.0 * h);
                let an = if axis == 0 { base.gradient[t].x } else { base.gradient[t].y };
                if (fd - an).abs() > tol * fd.abs().max(an.abs()).max(1.0) {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn plateau_has_zero_cost() {
        let tsdf = scene_tsdf(&[Vec2::new(4.0, 2.5)]);
        let cg = collision_cost(&straight(-2.0), &tsdf, &RobotFootprint::default());
        assert_eq!(cg.cost, 0.0);
        assert!(cg.gradient.iter().all(|g| *g == Vec2::ZERO));
    }

    #[test]
    fn collision_matches_brute_force() {
        let tsdf = scene_tsdf(&[Vec2::new(1.0, 0.2)]);
        let traj = straight(0.013);
        let cg = collision_cost(&traj, &tsdf, &RobotFootprint::default());
        assert!((cg.cost - brute_collision(&traj, &tsdf, 0.17)).abs() < 1e-6);
        assert!(cg.cost > 0.0);
    }

    #[test]
    fn collision_gradient_matches_finite_differences() {
        let tsdf = scene_tsdf(&[Vec2::new(1.0, 0.2), Vec2::new(1.6, -0.4)]);
        let fp = RobotFootprint::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut pass = 0;
        let n = 300;
        for _ in 0..n {
            let pts: Vec<Vec2> = (1..=8)
                .map(|i| Vec2::new(0.25 * i as f64 + rng.random_range(-0.1..0.1), rng.random_range(-0.4..0.4)))
                .collect();
            if fd_check(|t| collision_cost(t, &tsdf, &fp), &Trajectory::new(pts).unwrap(), 1e-4) {
                pass += 1;
            }
        }
        // Probes whose offset points straddle a cell boundary can fail.
        assert!(pass as f64 >= 0.97 * n as f64, "{pass}/{n}");
    }

    #[test]
    fn goal_cost_examples_and_gradient() {
        let t = straight(0.0);
        assert!(goal_cost(&t, Vec2::new(1.0, 0.0), 8).cost.abs() < 1e-15);
        assert!((goal_cost(&t, Vec2::new(-3.0, 0.0), 8).cost - 2.0).abs() < 1e-15);
        assert!((goal_cost(&t, Vec2::new(0.0, 0.5), 8).cost - 1.0).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let pts: Vec<Vec2> = (0..8).map(|_| Vec2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
            let goal = Vec2::from_angle(rng.random_range(-3.0..3.0));
            let traj = Trajectory::new(pts).unwrap();
            assert!(fd_check(|t| goal_cost(t, goal, 8), &traj, 1e-6));
            let g = goal_cost(&traj, goal, 8);
            assert!(g.gradient[..7].iter().all(|v| *v == Vec2::ZERO));
        }
    }

    #[test]
    fn total_cost_reductions() {
        let tsdf = scene_tsdf(&[Vec2::new(1.0, 0.2)]);
        let traj = straight(0.05);
        let fp = RobotFootprint::default();
        let goal = Vec2::new(0.3, 1.0);
        let only_coll = GuidanceParams {
            goal_weight: 0.0,
            ..Default::default()
        };
        let only_goal = GuidanceParams {
            collision_weight: 0.0,
            ..Default::default()
        };
        assert_eq!(total_cost(&traj, &tsdf, goal, &fp, &only_coll).cost, 0.01 * collision_cost(&traj, &tsdf, &fp).cost);
        assert_eq!(total_cost(&traj, &tsdf, goal, &fp, &only_goal).cost, 0.5 * goal_cost(&traj, goal, 8).cost);
        let both = total_cost(&traj, &tsdf, goal, &fp, &GuidanceParams::default()).cost;
        let hand = 0.5 * goal_cost(&traj, goal, 8).cost + 0.01 * collision_cost(&traj, &tsdf, &fp).cost;
        assert!((both - hand).abs() < 1e-12);
    }

    fn toward(angle_deg: f64) -> Trajectory {
        let d = Vec2::from_angle(angle_deg.to_radians());
        Trajectory::new((1..=8).map(|i| d * (0.25 * i as f64)).collect()).unwrap()
    }

    #[test]
    fn election_examples() {
        let mut samples: Vec<Trajectory> = [0.0, 3.0, -4.0, 2.0, 4.5, -1.0, 1.0, -2.5].iter().map(|&a| toward(a)).collect();
        samples.push(toward(90.0));
        samples.push(toward(91.0));
        let e = elect_goal(&samples, 8, 2, 10, 0).unwrap();
        assert!(e.chosen < 8);
        assert_eq!(e.populations.iter().sum::<usize>(), 10);
        for c in &e.centers {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }

        let same = vec![toward(30.0); 5];
        let e = elect_goal(&same, 8, 3, 10, 1).unwrap();
        assert_eq!((e.chosen, e.centers.len()), (0, 1));

        let split = vec![toward(10.0), toward(190.0), toward(10.0), toward(190.0)];
        let e = elect_goal(&split, 8, 2, 10, 2).unwrap();
        // Tied populations: 190 degrees (-170) comes first in angular order.
        assert_eq!(e.chosen, 1);
        assert_eq!(e.populations, vec![2, 2]);

        let mut bad = samples.clone();
        bad[3] = Trajectory::new(vec![Vec2::ZERO; 8]).unwrap();
        assert!(matches!(elect_goal(&bad, 8, 2, 10, 0), Err(GuideError::DegenerateDirections { sample: 3, .. })));
    }

    #[test]
    fn selection_reductions_and_hand_example() {
        let tsdf = scene_tsdf(&[Vec2::new(1.0, 0.0)]);
        let fp = RobotFootprint::default();
        let samples = vec![toward(0.0), toward(25.0), toward(60.0)];
        let goal = Vec2::new(1.0, 0.0);
        let cos: Vec<f64> = samples.iter().map(|s| goal_similarity(s, goal, 8)).collect();
        let coll: Vec<f64> = samples.iter().map(|s| collision_cost(s, &tsdf, &fp).cost).collect();
        let argmax = |v: &[f64]| (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b });
        assert_eq!(select_action(&samples, &tsdf, goal, 1.0, &fp, 8, None), argmax(&cos));
        let neg: Vec<f64> = coll.iter().map(|c| -c).collect();
        assert_eq!(select_action(&samples, &tsdf, goal, 0.0, &fp, 8, None), argmax(&neg));
        let mixed: Vec<f64> = (0..3).map(|i| 0.5 * cos[i] - 0.5 * coll[i]).collect();
        assert_eq!(select_action(&samples, &tsdf, goal, 0.5, &fp, 8, None), argmax(&mixed));
    }

    struct Zero(usize);
    impl NoisePredictor for Zero {
        fn action_dim(&self) -> usize {
            self.0
        }
        fn predict_batch(&self, _: &[f64], batch: usize, _: &Context, _: usize) -> Vec<f64> {
            vec![0.0; batch * self.0]
        }
    }

    #[test]
    fn zero_step_size_is_plain_denoising() {
        let tsdf = scene_tsdf(&[Vec2::new(1.0, 0.0)]);
        let scale = |_: &Trajectory| 0.25;
        let scene = GuidanceScene {
            tsdf: &tsdf,
            goal: Vec2::new(1.0, 0.0),
            stats: ActionStats::default(),
            footprint: RobotFootprint::default(),
            scale: &scale,
        };
        let sched = NoiseSchedule::squared_cosine(10).unwrap();
        let state = DiffusionState {
            action: NormalizedAction(vec![Vec2::new(0.3, 0.1); 8]),
            step: 2,
        };
        let params = GuidanceParams {
            step_size: 0.0,
            ..Default::default()
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let guided = guided_denoise_step(&state, &Context::default(), &Zero(16), &sched, &scene, &params, &mut r1).unwrap();
        let plain = crate::diffusion::denoise_step(&state, &Context::default(), &Zero(16), &sched, &mut r2).unwrap();
        assert_eq!(guided, plain);
    }

    #[test]
    fn guided_step_reduces_collision_cost() {
        // Nearly identity denoising isolates the gradient step.
        let sched = NoiseSchedule::from_betas(vec![1e-12]).unwrap();
        let scale = |_: &Trajectory| 0.25;
        let stats = ActionStats::new(-0.2, 1.8, -1.0, 1.0).unwrap();
        let params = GuidanceParams {
            goal_weight: 0.0,
            collision_weight: 1.0,
            step_size: 0.01,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let obstacle = Vec2::new(rng.random_range(0.8..1.6), rng.random_range(-0.3..0.3));
            let tsdf = scene_tsdf(&[obstacle]);
            let scene = GuidanceScene {
                tsdf: &tsdf,
                goal: Vec2::new(1.0, 0.0),
                stats,
                footprint: RobotFootprint::default(),
                scale: &scale,
            };
            let unit = NormalizedAction(vec![Vec2::new(0.0, rng.random_range(-0.1..0.1)); 8]);
            let state = DiffusionState { action: unit, step: 1 };
            let cost = |a: &NormalizedAction| collision_cost(&metric_of(&a.flatten(), &stats, 0.25), &tsdf, &scene.footprint).cost;
            let before = cost(&state.action);
            let after = guided_denoise_step(&state, &Context::default(), &Zero(16), &sched, &scene, &params, &mut rng).unwrap();
            assert!(cost(&after.action) < before, "trial {trial}: {} !< {before}", cost(&after.action));
        }
    }

    #[test]
    fn guided_sample_runs_and_reuse_tail_runs() {
        let tsdf = scene_tsdf(&[Vec2::new(1.0, 0.0)]);
        let scale = |_: &Trajectory| 0.25;
        let scene = GuidanceScene {
            tsdf: &tsdf,
            goal: Vec2::ZERO,
            stats: ActionStats::default(),
            footprint: RobotFootprint::default(),
            scale: &scale,
        };
        let sched = NoiseSchedule::squared_cosine(10).unwrap();
        for second_loop in [SecondLoop::Resample, SecondLoop::ReuseTail] {
            let params = GuidanceParams {
                second_loop,
                ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let out = guided_sample(&Context::default(), &Zero(16), &sched, &scene, &params, &mut rng, 3, true).unwrap();
            assert_eq!(out.samples.len(), 8);
            assert_eq!(out.trace.len(), 16);
            assert!(out.chosen < 8);
        }
    }

    proptest! {
        #[test]
        fn election_is_permutation_equivariant(angles in proptest::collection::vec(-179.0f64..179.0, 6..12), seed in 0u64..50, rot in 0usize..12) {
            let samples: Vec<Trajectory> = angles.iter().map(|&a| toward(a)).collect();
            let e = elect_goal(&samples, 8, 3, 10, seed).unwrap();
            let n = samples.len();
            let perm: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
            let permuted: Vec<Trajectory> = perm.iter().map(|&i| samples[i].clone()).collect();
            let ep = elect_goal(&permuted, 8, 3, 10, seed).unwrap();
            // Duplicated directions tie; only the elected direction is order-free.
            prop_assert_eq!(samples[perm[ep.chosen]].waypoint(8), samples[e.chosen].waypoint(8));
        }

        #[test]
        fn selection_invariant_under_positive_rescaling(
            coll in proptest::collection::vec(0.0f64..5.0, 3..8),
            cos in proptest::collection::vec(-1.0f64..1.0, 8),
            gamma in 0.0f64..1.0,
            factor in 0.1f64..10.0,
            offset in -3.0f64..3.0,
        ) {
            let n = coll.len();
            let score = |i: usize, f: f64, o: f64| f * (gamma * cos[i] - (1.0 - gamma) * coll[i]) + o;
            let pick = |f: f64, o: f64| (0..n).fold(0, |b, i| if score(i, f, o) > score(b, f, o) { i } else { b });
            prop_assert_eq!(pick(1.0, 0.0), pick(factor, offset));
        }
    }
}
