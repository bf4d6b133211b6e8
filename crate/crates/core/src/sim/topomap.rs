use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::expert::{expert_path, point_at, resample, ExpertParams};
use super::{SimError, WorldMap};
use crate::geom::{Pose2, Vec2};

/// Sparse route: a start pose plus subgoal nodes spaced along an expert path.
/// Node 0 is the start position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopoMap {
    pub world: String,
    pub start: Pose2,
    pub nodes: Vec<Vec2>,
    pub route: Vec<Vec2>,
    pub length: f64,
    pub capture_radius: f64,
}

impl TopoMap {
    pub fn from_route(world: &str, route: Vec<Vec2>, node_spacing: f64, capture_radius: f64) -> Self {
        let length = super::expert::polyline_length(&route);
        let mut nodes = resample(&route, node_spacing);
        let goal = *route.last().expect("non-empty route");
        if nodes.last().is_some_and(|n| n.distance(goal) > 1e-9) {
            nodes.push(goal);
        }
        let start = route[0];
        let heading = (point_at(&route, 0.25) - start).angle();
        Self {
            world: world.to_string(),
            start: Pose2::new(start.x, start.y, heading),
            nodes,
            route,
            length,
            capture_radius,
        }
    }

    pub fn goal(&self) -> Vec2 {
        *self.nodes.last().expect("non-empty topomap")
    }

    pub fn subgoal_count(&self) -> usize {
        self.nodes.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopoParams {
    pub min_length: f64,
    pub max_length: f64,
    pub node_spacing: f64,
    pub capture_radius: f64,
    /// Minimum wall distance of sampled start and goal positions.
    pub endpoint_clearance: f64,
    pub attempts: usize,
    pub expert: ExpertParams,
}

impl Default for TopoParams {
    fn default() -> Self {
        Self {
            min_length: 7.5,
            max_length: 25.0,
            node_spacing: 1.0,
            capture_radius: 0.5,
            endpoint_clearance: 0.35,
            attempts: 2000,
            expert: ExpertParams::default(),
        }
    }
}

fn sample_free(world: &WorldMap, rng: &mut ChaCha8Rng, clearance: f64) -> Vec2 {
    let (min, max) = world.bounds();
    loop {
        let p = Vec2::new(rng.random_range(min.x..max.x), rng.random_range(min.y..max.y));
        if world.distance(p) >= clearance {
            return p;
        }
    }
}

/// Samples `count` routes between random free points whose expert path
/// length lies in `[min_length, max_length]`.
pub fn generate_topomaps(world: &WorldMap, count: usize, params: &TopoParams, seed: u64) -> Result<Vec<TopoMap>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > params.attempts {
            return Err(SimError::InvalidWorld(format!(
                "{}: found only {} of {count} routes of length >= {}",
                world.name(),
                out.len(),
                params.min_length
            )));
        }
        let a = sample_free(world, &mut rng, params.endpoint_clearance);
        let b = sample_free(world, &mut rng, params.endpoint_clearance);
        if a.distance(b) < 0.3 * params.min_length {
            continue;
        }
        let path = match expert_path(world, a, b, &params.expert) {
            Ok(p) => p,
            Err(SimError::NoPath { .. }) => continue,
            Err(e) => return Err(e),
        };
        let len = path.length();
        if len < params.min_length || len > params.max_length {
            continue;
        }
        out.push(TopoMap::from_route(world.name(), path.polyline, params.node_spacing, params.capture_radius));
    }
    Ok(out)
}
