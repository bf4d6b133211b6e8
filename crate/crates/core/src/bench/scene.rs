use crate::diffusion::{oracle_predictor, GaussianMixture, MixtureComponent, MixtureOracle, NoiseSchedule};
use crate::geom::{Pose2, Segment, Vec2};
use crate::guide::{GuidanceScene, RobotFootprint};
use crate::percept::{perceive, DepthFrame, RansacParams, Tsdf, TsdfParams};
use crate::sim::{render_depth, Camera, WorldMap};
use crate::traj::{stats_normalize, ActionStats, Deltas, Trajectory, DEFAULT_HORIZON};

use super::pipeline::DIFFUSION_STEPS;
use super::BenchError;

/// Fixed scene for guidance sweeps: a lobby with one square pillar and a
/// closed-form multimodal policy whose dominant mode heads straight for it.
pub struct DemoScene {
    pub world: WorldMap,
    pub pose: Pose2,
    pub frame: DepthFrame,
    pub tsdf: Tsdf,
    pub predictor: MixtureOracle,
    pub schedule: NoiseSchedule,
    pub stats: ActionStats,
    /// Meters per unit step.
    pub scale: f64,
    pub footprint: RobotFootprint,
}

/// Pillar placement and policy modes of a [`DemoScene`].
#[derive(Debug, Clone, PartialEq)]
pub struct DemoLayout {
    pub pillar_center: Vec2,
    pub pillar_half: f64,
    /// Ray headings in degrees with mixture weights.
    pub modes: Vec<(f64, f64)>,
    /// Per-coordinate std of each mode in normalized action space.
    pub mode_std: f64,
}

impl Default for DemoLayout {
    fn default() -> Self {
        Self {
            pillar_center: Vec2::new(1.6, 1.6),
            pillar_half: 0.35,
            modes: vec![(-15.0, 1.0), (15.0, 1.0), (45.0, 2.0)],
            mode_std: 0.03,
        }
    }
}

fn square(center: Vec2, half: f64) -> Vec<Segment> {
    let c = [
        Vec2::new(center.x - half, center.y - half),
        Vec2::new(center.x + half, center.y - half),
        Vec2::new(center.x + half, center.y + half),
        Vec2::new(center.x - half, center.y + half),
    ];
    (0..4).map(|i| Segment::new(c[i], c[(i + 1) % 4])).collect()
}

pub fn lobby_world(layout: &DemoLayout) -> Result<WorldMap, BenchError> {
    let mut walls = vec![
        Segment::new(Vec2::new(-1.0, -3.0), Vec2::new(5.0, -3.0)),
        Segment::new(Vec2::new(5.0, -3.0), Vec2::new(5.0, 3.0)),
        Segment::new(Vec2::new(5.0, 3.0), Vec2::new(-1.0, 3.0)),
        Segment::new(Vec2::new(-1.0, 3.0), Vec2::new(-1.0, -3.0)),
    ];
    walls.extend(square(layout.pillar_center, layout.pillar_half));
    Ok(WorldMap::new("lobby", walls, 2.5)?)
}

fn ray_action(heading_deg: f64, stats: &ActionStats) -> Vec<f64> {
    let d = Vec2::from_angle(heading_deg.to_radians());
    stats_normalize(&Deltas(vec![d; DEFAULT_HORIZON]), stats).flatten()
}

impl DemoScene {
    pub fn new() -> Result<Self, BenchError> {
        Self::with_layout(&DemoLayout::default())
    }

    pub fn with_layout(layout: &DemoLayout) -> Result<Self, BenchError> {
        let world = lobby_world(layout)?;
        let pose = Pose2::new(0.0, 0.0, 0.0);
        let frame = render_depth(&world, pose, &Camera::default());
        let tsdf = perceive(&frame, &RansacParams::default(), &TsdfParams::default())?;
        let stats = ActionStats::default();
        let components = layout
            .modes
            .iter()
            .map(|&(deg, weight)| MixtureComponent {
                weight,
                mean: ray_action(deg, &stats),
                std: layout.mode_std,
            })
            .collect();
        let schedule = NoiseSchedule::squared_cosine(DIFFUSION_STEPS)?;
        let predictor = oracle_predictor(GaussianMixture::new(components)?, schedule.clone());
        Ok(Self {
            world,
            pose,
            frame,
            tsdf,
            predictor,
            schedule,
            stats,
            scale: 0.25,
            footprint: RobotFootprint::default(),
        })
    }

    pub fn guidance<'a>(&'a self, scale: &'a (dyn Fn(&Trajectory) -> f64 + Sync)) -> GuidanceScene<'a> {
        GuidanceScene {
            tsdf: &self.tsdf,
            goal: Vec2::new(1.0, 0.0),
            stats: self.stats,
            footprint: self.footprint,
            scale,
        }
    }

    /// Smallest true wall distance over the waypoints of an ego trajectory.
    pub fn clearance(&self, traj: &Trajectory) -> f64 {
        traj.points()
            .iter()
            .map(|&p| self.world.distance(self.pose.to_world(p)))
            .fold(f64::INFINITY, f64::min)
    }
}
