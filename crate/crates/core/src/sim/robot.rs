use serde::{Deserialize, Serialize};

use super::WorldMap;
use crate::control::ControllerCommand;
use crate::geom::{wrap_angle, Pose2, Segment, Vec2};

pub const DEFAULT_FOOTPRINT_RADIUS: f64 = 0.17;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub pose: Pose2,
    pub radius: f64,
}

impl RobotState {
    pub fn new(pose: Pose2) -> Self {
        Self {
            pose,
            radius: DEFAULT_FOOTPRINT_RADIUS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: RobotState,
    pub collided: bool,
    /// Simulated seconds actually elapsed (shorter than the command on contact).
    pub elapsed: f64,
    pub distance: f64,
}

/// Closed-form unicycle motion for time `t` at constant `(v, w)`.
pub fn integrate_unicycle(pose: Pose2, v: f64, w: f64, t: f64) -> Pose2 {
    if w.abs() < 1e-12 {
        let h = pose.heading();
        return Pose2::new(pose.x + v * t * h.x, pose.y + v * t * h.y, pose.theta);
    }
    let th1 = pose.theta + w * t;
    let r = v / w;
    Pose2::new(
        pose.x + r * (th1.sin() - pose.theta.sin()),
        pose.y - r * (th1.cos() - pose.theta.cos()),
        wrap_angle(th1),
    )
}

fn touching(world: &WorldMap, p: Vec2, radius: f64) -> bool {
    world.distance_within(p, radius).is_some()
}

/// Earliest time in `[0, dt]` at which the disk touches a wall, if any.
///
/// Over one short substep the center-to-wall distance is (near) convex in
/// time for each wall, so a ternary search finds its minimum and a bisection
/// on the decreasing branch finds the first contact. This also catches
/// grazing contacts that begin and end inside the substep.
fn first_contact(world: &WorldMap, pose: Pose2, v: f64, w: f64, dt: f64, radius: f64) -> Option<f64> {
    let start = pose.position();
    let end = integrate_unicycle(pose, v, w, dt).position();
    let travel = (v * dt).abs();
    let sagitta = if w.abs() > 1e-12 { travel * travel * w.abs() / (8.0 * v.abs().max(1e-12)) } else { 0.0 };
    let chord = Segment::new(start, end);
    world.segment_clearance_within(&chord, radius + sagitta + 1e-12)?;
    let at = |t: f64| integrate_unicycle(pose, v, w, t).position();
    let mut earliest: Option<f64> = None;
    for i in world.walls_near(start, radius + travel + 1e-9) {
        let wall = world.walls()[i];
        let d = |t: f64| wall.distance_to(at(t));
        let (mut lo, mut hi) = (0.0, dt);
        for _ in 0..80 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if d(m1) <= d(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        let t_min = 0.5 * (lo + hi);
        let t_min = if d(dt) <= d(t_min) { dt } else { t_min };
        if d(t_min) > radius {
            continue;
        }
        let (mut a, mut b) = (0.0, t_min);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if d(m) <= radius {
                b = m;
            } else {
                a = m;
            }
        }
        earliest = Some(earliest.map_or(a, |e: f64| e.min(a)));
    }
    earliest
}

/// Executes `cmd` in substeps of at most `1 / rate` seconds. On contact the
/// robot stops at the last contact-free instant.
pub fn step(robot: &RobotState, cmd: &ControllerCommand, world: &WorldMap, rate: f64) -> StepOutcome {
    let dt_max = 1.0 / rate;
    let mut pose = robot.pose;
    let mut elapsed = 0.0;
    let mut remaining = cmd.duration.max(0.0);
    let speed = cmd.v.abs();
    if touching(world, pose.position(), robot.radius) {
        return StepOutcome {
            state: *robot,
            collided: true,
            elapsed: 0.0,
            distance: 0.0,
        };
    }
    while remaining > 1e-12 {
        let dt = remaining.min(dt_max);
        if let Some(t) = first_contact(world, pose, cmd.v, cmd.omega, dt, robot.radius) {
            elapsed += t;
            return StepOutcome {
                state: RobotState {
                    pose: integrate_unicycle(pose, cmd.v, cmd.omega, t),
                    radius: robot.radius,
                },
                collided: true,
                elapsed,
                distance: speed * elapsed,
            };
        }
        pose = integrate_unicycle(pose, cmd.v, cmd.omega, dt);
        elapsed += dt;
        remaining -= dt;
    }
    StepOutcome {
        state: RobotState {
            pose,
            radius: robot.radius,
        },
        collided: false,
        elapsed,
        distance: speed * elapsed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn empty() -> WorldMap {
        WorldMap::new("empty", vec![], 2.5).unwrap()
    }

    fn cmd(v: f64, omega: f64, duration: f64) -> ControllerCommand {
        ControllerCommand { v, omega, duration }
    }

    #[test]
    fn straight_drive() {
        let out = step(&RobotState::new(Pose2::new(0.0, 0.0, 0.0)), &cmd(0.4, 0.0, 1.0), &empty(), 15.0);
        assert!(!out.collided);
        assert!((out.state.pose.x - 0.4).abs() < 1e-12 && out.state.pose.y.abs() < 1e-12);
        assert!((out.distance - 0.4).abs() < 1e-12);
    }

    #[test]
    fn pure_rotation() {
        let out = step(&RobotState::new(Pose2::new(1.0, 2.0, 0.0)), &cmd(0.0, 1.0, PI), &empty(), 15.0);
        assert!((out.state.pose.theta.abs() - PI).abs() < 1e-9);
        assert!((out.state.pose.x - 1.0).abs() < 1e-12 && (out.state.pose.y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wall_contact_arithmetic() {
        let world = WorldMap::new("wall", vec![Segment::new(Vec2::new(0.3, -1.0), Vec2::new(0.3, 1.0))], 2.5).unwrap();
        let out = step(&RobotState::new(Pose2::new(0.0, 0.0, 0.0)), &cmd(0.4, 0.0, 2.0), &world, 15.0);
        assert!(out.collided);
        assert!((out.state.pose.x - 0.13).abs() < 1e-9, "{}", out.state.pose.x);
    }

    #[test]
    fn arc_matches_fine_integration() {
        let start = Pose2::new(0.5, -0.2, 0.3);
        let exact = integrate_unicycle(start, 0.3, 0.8, 2.0);
        let mut p = start;
        let n = 200_000;
        for _ in 0..n {
            p = integrate_unicycle(p, 0.3, 0.0, 2.0 / n as f64);
            p.theta += 0.8 * 2.0 / n as f64;
        }
        assert!((p.position() - exact.position()).norm() < 1e-5);
    }

    proptest! {
        #[test]
        fn contact_matches_dense_oracle(
            wx in 0.3f64..1.5, wy in -0.5f64..0.5, ang in 0.0f64..PI,
            v in 0.05f64..0.4, omega in -1.0f64..1.0,
        ) {
            let dir = Vec2::from_angle(ang);
            let wall = Segment::new(Vec2::new(wx, wy) - dir * 0.6, Vec2::new(wx, wy) + dir * 0.6);
            let world = WorldMap::new("w", vec![wall], 2.5).unwrap();
            let robot = RobotState::new(Pose2::new(0.0, 0.0, 0.0));
            prop_assume!(world.distance(Vec2::ZERO) > robot.radius);
            let out = step(&robot, &cmd(v, omega, 3.0), &world, 15.0);
            // Dense oracle: first time the disk touches the wall on a fine grid.
            let n = 30_000;
            let first = (1..=n).map(|i| 3.0 * i as f64 / n as f64).find(|&t| {
                wall.distance_to(integrate_unicycle(robot.pose, v, omega, t).position()) <= robot.radius
            });
            match first {
                Some(t) => {
                    prop_assert!(out.collided);
                    prop_assert!((out.elapsed - t).abs() <= 3.0 / n as f64 + 1e-9);
                }
                None => prop_assert!(!out.collided),
            }
        }
    }
}
