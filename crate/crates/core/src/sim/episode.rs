use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::context::policy_context;
use super::expert::point_at;
use super::{render_depth, step, Camera, RobotState, SimError, TopoMap, WorldMap};
use crate::control::{position_plan, rotate_translate_plan, velocity_command, ControllerCommand, ControllerConfig, ControllerKind};
use crate::diffusion::{sample, Context, MlpPredictor, NoisePredictor, NoiseSchedule};
use crate::geom::{Pose2, Vec2};
use crate::guide::{guided_sample, GuidanceParams, GuidanceScene, RobotFootprint};
use crate::percept::{perceive, DepthFrame, RansacParams, TsdfParams};
use crate::scale::ScaleEstimator;
use crate::traj::{apply_scale, unit_trajectory, ActionStats, Scale, Trajectory, DEFAULT_HORIZON};

/// A trained noise predictor plus what is needed to turn its samples into
/// unit-scale trajectories.
#[derive(Clone)]
pub struct DiffusionPolicy {
    pub predictor: Arc<dyn NoisePredictor>,
    pub schedule: NoiseSchedule,
    pub stats: ActionStats,
}

impl DiffusionPolicy {
    pub fn from_mlp(predictor: MlpPredictor) -> Result<Self, SimError> {
        let stats = *predictor
            .stats()
            .ok_or_else(|| SimError::Dataset("predictor checkpoint carries no action statistics".into()))?;
        Ok(Self {
            schedule: predictor.schedule().clone(),
            predictor: Arc::new(predictor),
            stats,
        })
    }
}

#[derive(Clone)]
pub enum PolicySource {
    Diffusion(DiffusionPolicy),
    /// Follows the topomap route: the next `horizon` route points at
    /// `spacing`, expressed in unit steps of `spacing`.
    Expert { spacing: f64, horizon: usize },
    /// Straight ahead at unit spacing regardless of input.
    Straight { horizon: usize },
}

/// Everything between an observation and a motor command.
#[derive(Clone)]
pub struct PolicyStack {
    pub policy: PolicySource,
    pub scale: Arc<dyn ScaleEstimator>,
    /// Cost guidance and candidate selection; diffusion policies only.
    pub guidance: Option<GuidanceParams>,
    pub controller: ControllerKind,
    pub control: ControllerConfig,
    pub camera: Camera,
    pub ransac: RansacParams,
    pub tsdf: TsdfParams,
    pub footprint: RobotFootprint,
}

impl PolicyStack {
    pub fn new(policy: PolicySource, scale: Arc<dyn ScaleEstimator>, controller: ControllerKind) -> Self {
        Self {
            policy,
            scale,
            guidance: None,
            controller,
            control: ControllerConfig::default(),
            camera: Camera::default(),
            ransac: RansacParams::default(),
            tsdf: TsdfParams::default(),
            footprint: RobotFootprint::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EpisodeMode {
    /// Follow the topomap; score is the fraction of subgoals reached.
    Navigation,
    /// No goal; score is the distance driven before the episode ends.
    Exploration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub mode: EpisodeMode,
    /// Seconds without topomap progress (or, exploring, without moving
    /// `stuck_distance`) before giving up.
    pub stuck_window: f64,
    pub stuck_distance: f64,
    /// Navigation time limit: `time_slack + time_factor * length / v_max`.
    pub time_factor: f64,
    pub time_slack: f64,
    pub exploration_time: f64,
    /// Upcoming subgoals checked for capture each tick.
    pub capture_lookahead: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            mode: EpisodeMode::Navigation,
            stuck_window: 10.0,
            stuck_distance: 0.25,
            time_factor: 2.0,
            time_slack: 10.0,
            exploration_time: 60.0,
            capture_lookahead: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Goal,
    Collision,
    Stuck,
    Timeout,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Goal => "goal",
            Self::Collision => "collision",
            Self::Stuck => "stuck",
            Self::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub seed: u64,
    /// Share of topomap subgoals reached; zero when exploring.
    pub fraction: f64,
    pub collisions: u32,
    pub distance: f64,
    pub duration: f64,
    pub plans: u32,
    pub termination: Termination,
}

struct Runner<'a> {
    stack: &'a PolicyStack,
    topomap: &'a TopoMap,
    world: &'a WorldMap,
    config: &'a EpisodeConfig,
    rng: ChaCha8Rng,
    election_seed: u64,
    robot: RobotState,
    next: usize,
    time: f64,
    distance: f64,
    last_progress: f64,
    anchor: Vec2,
    route_s: f64,
    path: Option<Vec<Pose2>>,
}

enum Tick {
    Continue,
    Done(Termination),
}

impl Runner<'_> {
    fn exploring(&self) -> bool {
        self.config.mode == EpisodeMode::Exploration
    }

    fn time_limit(&self) -> f64 {
        if self.exploring() {
            self.config.exploration_time
        } else {
            self.config.time_slack + self.config.time_factor * self.topomap.length / self.stack.control.v_max
        }
    }

    fn capture(&mut self) {
        if self.exploring() {
            let p = self.robot.pose.position();
            if p.distance(self.anchor) >= self.config.stuck_distance {
                self.anchor = p;
                self.last_progress = self.time;
            }
            return;
        }
        let p = self.robot.pose.position();
        let nodes = &self.topomap.nodes;
        let end = (self.next + self.config.capture_lookahead).min(nodes.len());
        if let Some(hit) = (self.next..end).rev().find(|&i| nodes[i].distance(p) < self.topomap.capture_radius) {
            self.next = hit + 1;
            self.last_progress = self.time;
        }
    }

    fn check(&self) -> Option<Termination> {
        if !self.exploring() && self.next >= self.topomap.nodes.len() {
            return Some(Termination::Goal);
        }
        if self.time - self.last_progress >= self.config.stuck_window - 1e-9 {
            return Some(Termination::Stuck);
        }
        if self.time >= self.time_limit() - 1e-9 {
            return Some(Termination::Timeout);
        }
        None
    }

    /// Executes one command in control-period chunks, checking capture and
    /// termination after each chunk.
    fn execute(&mut self, cmd: &ControllerCommand) -> Tick {
        let period = self.stack.control.period();
        let mut remaining = cmd.duration;
        while remaining > 1e-12 {
            let chunk = ControllerCommand {
                duration: remaining.min(period),
                ..*cmd
            };
            remaining -= chunk.duration;
            let out = step(&self.robot, &chunk, self.world, self.stack.control.frequency);
            self.robot = out.state;
            self.time += out.elapsed;
            self.distance += out.distance;
            if let Some(path) = self.path.as_mut() {
                path.push(self.robot.pose);
            }
            if out.collided {
                return Tick::Done(Termination::Collision);
            }
            self.capture();
            if let Some(t) = self.check() {
                return Tick::Done(t);
            }
        }
        Tick::Continue
    }

    fn expert_unit(&mut self, spacing: f64, horizon: usize) -> Trajectory {
        let route = &self.topomap.route;
        let p = self.robot.pose.position();
        // Project onto the route near the previous projection.
        let (lo, hi) = (self.route_s - 0.5, self.route_s + 2.0);
        let mut best = (f64::INFINITY, self.route_s);
        let mut acc = 0.0;
        for w in route.windows(2) {
            let len = w[0].distance(w[1]);
            if acc + len >= lo && acc <= hi && len > 0.0 {
                let t = ((p - w[0]).dot(w[1] - w[0]) / (len * len)).clamp(0.0, 1.0);
                let s = (acc + t * len).clamp(lo, hi);
                let d = point_at(route, s).distance(p);
                if d < best.0 {
                    best = (d, s);
                }
            }
            acc += len;
        }
        self.route_s = best.1.max(0.0);
        let pose = self.robot.pose;
        let pts = (1..=horizon)
            .map(|k| pose.to_ego(point_at(route, self.route_s + k as f64 * spacing)) * (1.0 / spacing))
            .collect();
        Trajectory::new(pts).expect("positive horizon")
    }

    fn scale_of(&self, frame: &DepthFrame, unit: &Trajectory) -> Result<Scale, SimError> {
        self.stack.scale.estimate(frame, unit).map_err(SimError::from)
    }

    fn plan(&mut self, frame: &DepthFrame) -> Result<Trajectory, SimError> {
        let goal = (!self.exploring()).then(|| self.robot.pose.to_ego(self.topomap.nodes[self.next]));
        match &self.stack.policy {
            PolicySource::Expert { spacing, horizon } => {
                let unit = self.expert_unit(*spacing, *horizon);
                Ok(apply_scale(&unit, self.scale_of(frame, &unit)?))
            }
            PolicySource::Straight { horizon } => {
                let unit = Trajectory::new((1..=*horizon).map(|k| Vec2::new(k as f64, 0.0)).collect()).expect("positive horizon");
                Ok(apply_scale(&unit, self.scale_of(frame, &unit)?))
            }
            PolicySource::Diffusion(policy) => {
                let ctx = policy_context(frame, self.stack.camera.max_range, goal);
                match &self.stack.guidance {
                    None => self.plan_unguided(policy, &ctx, frame),
                    Some(params) => self.plan_guided(policy, params, &ctx, frame),
                }
            }
        }
    }

    fn plan_unguided(&mut self, policy: &DiffusionPolicy, ctx: &Context, frame: &DepthFrame) -> Result<Trajectory, SimError> {
        let action = sample(ctx, policy.predictor.as_ref(), &policy.schedule, &mut self.rng, 1)?
            .pop()
            .expect("one sample");
        let unit = unit_trajectory(&action, &policy.stats);
        Ok(apply_scale(&unit, self.scale_of(frame, &unit)?))
    }

    fn plan_guided(
        &mut self,
        policy: &DiffusionPolicy,
        params: &GuidanceParams,
        ctx: &Context,
        frame: &DepthFrame,
    ) -> Result<Trajectory, SimError> {
        let tsdf = perceive(frame, &self.stack.ransac, &self.stack.tsdf)?;
        let estimator = &self.stack.scale;
        let fallback = self.stack.control.v_max / self.stack.control.frequency;
        let scale = |u: &Trajectory| estimator.estimate(frame, u).map_or(fallback, Scale::value);
        let scene = GuidanceScene {
            tsdf: &tsdf,
            goal: Vec2::ZERO,
            stats: policy.stats,
            footprint: self.stack.footprint,
            scale: &scale,
        };
        self.election_seed = self.election_seed.wrapping_add(1);
        let out = guided_sample(
            ctx,
            policy.predictor.as_ref(),
            &policy.schedule,
            &scene,
            params,
            &mut self.rng,
            self.election_seed,
            false,
        )?;
        Ok(out.chosen_trajectory().clone())
    }

    fn run(&mut self) -> Result<(Termination, u32), SimError> {
        let mut plans = 0u32;
        self.capture();
        if let Some(t) = self.check() {
            return Ok((t, plans));
        }
        let period = self.stack.control.period();
        let wait = ControllerCommand {
            v: 0.0,
            omega: 0.0,
            duration: period,
        };
        loop {
            let frame = render_depth(self.world, self.robot.pose, &self.stack.camera);
            let traj = self.plan(&frame)?;
            plans += 1;
            let commands = match self.stack.controller {
                ControllerKind::Velocity => vec![velocity_command(&traj, &self.stack.control)],
                // The robot holds still for one period while planning.
                ControllerKind::Position => std::iter::once(wait).chain(position_plan(&traj, &self.stack.control).commands).collect(),
                ControllerKind::RotateTranslate => {
                    std::iter::once(wait).chain(rotate_translate_plan(&traj, &self.stack.control)).collect()
                }
            };
            for cmd in &commands {
                if let Tick::Done(t) = self.execute(cmd) {
                    return Ok((t, plans));
                }
            }
            if commands.iter().all(|c| c.duration <= 1e-12) {
                if let Tick::Done(t) = self.execute(&wait) {
                    return Ok((t, plans));
                }
            }
        }
    }
}

/// Runs one episode from the topomap's start pose. Everything random is
/// drawn from a stream seeded by `seed`.
pub fn run_episode(
    stack: &PolicyStack,
    topomap: &TopoMap,
    world: &WorldMap,
    config: &EpisodeConfig,
    seed: u64,
) -> Result<EpisodeResult, SimError> {
    run_inner(stack, topomap, world, config, seed, None).map(|(r, _)| r)
}

/// Like [`run_episode`], also returning the pose after every control chunk.
pub fn run_episode_traced(
    stack: &PolicyStack,
    topomap: &TopoMap,
    world: &WorldMap,
    config: &EpisodeConfig,
    seed: u64,
) -> Result<(EpisodeResult, Vec<Pose2>), SimError> {
    run_inner(stack, topomap, world, config, seed, Some(vec![topomap.start])).map(|(r, p)| (r, p.unwrap_or_default()))
}

fn run_inner(
    stack: &PolicyStack,
    topomap: &TopoMap,
    world: &WorldMap,
    config: &EpisodeConfig,
    seed: u64,
    path: Option<Vec<Pose2>>,
) -> Result<(EpisodeResult, Option<Vec<Pose2>>), SimError> {
    if topomap.nodes.len() < 2 {
        return Err(SimError::InvalidWorld("topomap needs at least one subgoal".into()));
    }
    let mut runner = Runner {
        stack,
        topomap,
        world,
        config,
        rng: ChaCha8Rng::seed_from_u64(seed),
        election_seed: seed.rotate_left(17),
        robot: RobotState::new(topomap.start),
        next: 1,
        time: 0.0,
        distance: 0.0,
        last_progress: 0.0,
        anchor: topomap.start.position(),
        route_s: 0.0,
        path,
    };
    let (termination, plans) = runner.run()?;
    let fraction = if runner.exploring() {
        0.0
    } else {
        (runner.next - 1) as f64 / topomap.subgoal_count() as f64
    };
    Ok((
        EpisodeResult {
            seed,
            fraction,
            collisions: u32::from(termination == Termination::Collision),
            distance: runner.distance,
            duration: runner.time,
            plans,
            termination,
        },
        runner.path,
    ))
}

/// Default unit-horizon expert policy at the given spacing.
pub fn expert_policy(spacing: f64) -> PolicySource {
    PolicySource::Expert {
        spacing,
        horizon: DEFAULT_HORIZON,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Segment;
    use crate::scale::ConstantScale;

    fn corridor(len: f64) -> WorldMap {
        let walls = vec![
            Segment::new(Vec2::new(-1.0, -0.6), Vec2::new(len + 1.0, -0.6)),
            Segment::new(Vec2::new(-1.0, 0.6), Vec2::new(len + 1.0, 0.6)),
        ];
        WorldMap::new("corridor", walls, 2.5).unwrap()
    }

    fn oracle_stack(policy: PolicySource, controller: ControllerKind) -> PolicyStack {
        PolicyStack::new(policy, Arc::new(ConstantScale::oracle(0.25).unwrap()), controller)
    }

    #[test]
    fn expert_completes_short_straight_route() {
        let world = corridor(3.0);
        let map = TopoMap::from_route("corridor", vec![Vec2::ZERO, Vec2::new(3.0, 0.0)], 1.0, 0.5);
        for kind in ControllerKind::ALL {
            let stack = oracle_stack(expert_policy(0.25), kind);
            let r = run_episode(&stack, &map, &world, &EpisodeConfig::default(), 3).unwrap();
            assert_eq!(r.termination, Termination::Goal, "{kind}");
            assert_eq!((r.fraction, r.collisions), (1.0, 0), "{kind}");
        }
    }

    #[test]
    fn straight_policy_hits_dead_end() {
        let mut world_walls = corridor(3.0).walls().to_vec();
        world_walls.push(Segment::new(Vec2::new(2.0, -0.6), Vec2::new(2.0, 0.6)));
        let world = WorldMap::new("dead-end", world_walls, 2.5).unwrap();
        let map = TopoMap::from_route("dead-end", vec![Vec2::ZERO, Vec2::new(1.5, 0.0), Vec2::new(1.5, 3.0)], 1.0, 0.5);
        let stack = oracle_stack(PolicySource::Straight { horizon: 8 }, ControllerKind::Velocity);
        let r = run_episode(&stack, &map, &world, &EpisodeConfig::default(), 0).unwrap();
        assert_eq!(r.termination, Termination::Collision);
        assert_eq!(r.collisions, 1);
        assert!((r.distance - (2.0 - 0.17)).abs() < 0.05, "{}", r.distance);
    }

    #[test]
    fn exploration_scores_distance() {
        let world = corridor(30.0);
        let map = TopoMap::from_route("corridor", vec![Vec2::ZERO, Vec2::new(3.0, 0.0)], 1.0, 0.5);
        let stack = oracle_stack(PolicySource::Straight { horizon: 8 }, ControllerKind::Velocity);
        let config = EpisodeConfig {
            mode: EpisodeMode::Exploration,
            exploration_time: 5.0,
            ..Default::default()
        };
        let r = run_episode(&stack, &map, &world, &config, 0).unwrap();
        assert_eq!(r.termination, Termination::Timeout);
        assert_eq!(r.fraction, 0.0);
        assert!((r.distance - 2.0).abs() < 1e-6, "{}", r.distance);
    }

    #[test]
    fn stuck_when_no_progress() {
        let world = corridor(3.0);
        let map = TopoMap::from_route("corridor", vec![Vec2::ZERO, Vec2::new(3.0, 0.0)], 1.0, 0.5);
        let mut stack = oracle_stack(PolicySource::Straight { horizon: 8 }, ControllerKind::Velocity);
        stack.control.v_max = 0.0;
        let r = run_episode(&stack, &map, &world, &EpisodeConfig::default(), 0).unwrap();
        assert_eq!(r.termination, Termination::Stuck);
        assert!((r.duration - 10.0).abs() < 0.1);
    }
}
