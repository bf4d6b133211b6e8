//! Turning metric trajectories into unicycle commands.
//!
//! Three execution styles are supported: re-aiming at a single look-ahead
//! waypoint every cycle ([`velocity_command`]), following every waypoint up
//! to the look-ahead index with exact arcs ([`position_plan`]), and
//! stop-turn-drive ([`rotate_translate_plan`]).

use std::f64::consts::FRAC_PI_4;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::geom::{wrap_angle, Vec2};
use crate::traj::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerCommand {
    /// Linear velocity, m/s.
    pub v: f64,
    /// Angular velocity, rad/s.
    pub omega: f64,
    /// Seconds.
    pub duration: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub v_max: f64,
    pub omega_max: f64,
    /// Control rate in Hz.
    pub frequency: f64,
    /// 1-based index of the look-ahead waypoint.
    pub goal_index: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            v_max: 0.4,
            omega_max: 1.0,
            frequency: 15.0,
            goal_index: 3,
        }
    }
}

impl ControllerConfig {
    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }

    /// Tightest turn radius reachable at full speed.
    pub fn min_turn_radius(&self) -> f64 {
        self.v_max / self.omega_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerKind {
    Velocity,
    Position,
    RotateTranslate,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [Self::Velocity, Self::Position, Self::RotateTranslate];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Velocity => "velocity",
            Self::Position => "position",
            Self::RotateTranslate => "rotate-translate",
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown controller `{s}` (expected velocity, position or rotate-translate)"))
    }
}

/// One control period aimed straight at waypoint `goal_index`.
pub fn velocity_command(traj: &Trajectory, cfg: &ControllerConfig) -> ControllerCommand {
    let dt = cfg.period();
    let idx = cfg.goal_index.min(traj.horizon());
    let target = traj.waypoint(idx);
    if target.norm() < 1e-12 {
        return ControllerCommand { v: 0.0, omega: 0.0, duration: dt };
    }
    let v = target.norm() / dt;
    let omega = target.y.atan2(target.x) / dt;
    ControllerCommand {
        v: v.min(cfg.v_max),
        omega: omega.clamp(-cfg.omega_max, cfg.omega_max),
        duration: dt,
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PositionPlan {
    pub commands: Vec<ControllerCommand>,
    /// 1-based waypoints whose connecting arc would have needed a radius
    /// below `v_max / omega_max`; these are reached by turning in place first.
    pub infeasible_curvature: Vec<usize>,
}

impl PositionPlan {
    pub fn duration(&self) -> f64 {
        self.commands.iter().map(|c| c.duration).sum()
    }
}

/// Waypoint-by-waypoint tracking of `1..=goal_index` from the ego origin.
///
/// Each waypoint is reached exactly: either by the circular arc tangent to
/// the current heading (when its radius is at least the full-speed turn
/// radius and the heading error is at most 45 degrees) or by an in-place
/// rotation followed by a straight drive.
pub fn position_plan(traj: &Trajectory, cfg: &ControllerConfig) -> PositionPlan {
    let mut plan = PositionPlan::default();
    let mut pos = Vec2::ZERO;
    let mut heading = 0.0f64;
    for idx in 1..=cfg.goal_index.min(traj.horizon()) {
        let rel = (traj.waypoint(idx) - pos).rotate(-heading);
        let d = rel.norm();
        if d < 1e-9 {
            continue;
        }
        let err = rel.y.atan2(rel.x);
        let radius = if err.abs() < 1e-12 { f64::INFINITY } else { d / (2.0 * err.sin().abs()) };
        if err.abs() > FRAC_PI_4 || radius < cfg.min_turn_radius() {
            plan.infeasible_curvature.push(idx);
            push_merged(&mut plan.commands, rotation(err, cfg));
            push_merged(
                &mut plan.commands,
                ControllerCommand { v: cfg.v_max, omega: 0.0, duration: d / cfg.v_max },
            );
            heading += err;
        } else if err.abs() < 1e-12 {
            push_merged(
                &mut plan.commands,
                ControllerCommand { v: cfg.v_max, omega: 0.0, duration: d / cfg.v_max },
            );
        } else {
            let arc = d * err / err.sin();
            let omega = 2.0 * err / arc * cfg.v_max;
            push_merged(
                &mut plan.commands,
                ControllerCommand { v: cfg.v_max, omega, duration: arc / cfg.v_max },
            );
            heading += 2.0 * err;
        }
        heading = wrap_angle(heading);
        pos = traj.waypoint(idx);
    }
    plan
}

/// Rotate in place toward each waypoint, then drive straight to it.
pub fn rotate_translate_plan(traj: &Trajectory, cfg: &ControllerConfig) -> Vec<ControllerCommand> {
    let mut out = Vec::new();
    let mut pos = Vec2::ZERO;
    let mut heading = 0.0f64;
    for idx in 1..=cfg.goal_index.min(traj.horizon()) {
        let rel = (traj.waypoint(idx) - pos).rotate(-heading);
        let d = rel.norm();
        if d < 1e-9 {
            continue;
        }
        let err = rel.y.atan2(rel.x);
        out.push(rotation(err, cfg));
        out.push(ControllerCommand { v: cfg.v_max, omega: 0.0, duration: d / cfg.v_max });
        heading = wrap_angle(heading + err);
        pos = traj.waypoint(idx);
    }
    out
}

fn rotation(err: f64, cfg: &ControllerConfig) -> ControllerCommand {
    ControllerCommand {
        v: 0.0,
        omega: if err < 0.0 { -cfg.omega_max } else { cfg.omega_max },
        duration: err.abs() / cfg.omega_max,
    }
}

fn push_merged(cmds: &mut Vec<ControllerCommand>, c: ControllerCommand) {
    if c.duration <= 0.0 {
        return;
    }
    match cmds.last_mut() {
        Some(last) if last.v == c.v && last.omega == c.omega => last.duration += c.duration,
        _ => cmds.push(c),
    }
}

/// `t,v,omega` rows, `t` being each command's start time.
pub fn commands_to_csv(cmds: &[ControllerCommand]) -> String {
    let mut s = String::from("t,v,omega\n");
    let mut t = 0.0;
    for c in cmds {
        let _ = writeln!(s, "{t},{},{}", c.v, c.omega);
        t += c.duration;
    }
    s
}
