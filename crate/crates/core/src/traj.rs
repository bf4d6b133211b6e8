//! Trajectory representations and the two-stage action normalization.
//!
//! A [`Trajectory`] is a sequence of ego-frame waypoints that follow an
//! implicit origin at `(0, 0)`. Policies work on unit-scale consecutive
//! differences ([`Deltas`]) that are further mapped per axis into `[-1, 1]`
//! with [`ActionStats`], giving a [`NormalizedAction`]. Every step has an
//! exact inverse except the division by the segment scale, which has to be
//! supplied again (from ground truth or an estimator) via [`apply_scale`].

use crate::geom::Vec2;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

/// Number of future waypoints predicted per action.
pub const DEFAULT_HORIZON: usize = 8;

/// Single ego-frame waypoint, meters (x forward, y left).
pub type Waypoint = Vec2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajError {
    #[error("trajectory has zero total length")]
    ZeroLengthTrajectory,
    #[error("trajectory needs at least {needed} waypoints, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("degenerate action statistics on axis {axis}: min {min} >= max {max}")]
    DegenerateStats { axis: char, min: f64, max: f64 },
    #[error("non-finite value in trajectory data")]
    NonFinite,
    #[error("scale must be strictly positive and finite, got {0}")]
    InvalidScale(f64),
    #[error("malformed trajectory csv: {0}")]
    Csv(String),
}

/// Ordered waypoints relative to an implicit origin at `(0, 0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<Waypoint>,
}

impl Trajectory {
    pub fn new(points: Vec<Waypoint>) -> Result<Self, TrajError> {
        if points.iter().any(|p| !p.is_finite()) {
            return Err(TrajError::NonFinite);
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Waypoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Waypoint> {
        self.points
    }

    /// Number of waypoints (the action horizon).
    pub fn horizon(&self) -> usize {
        self.points.len()
    }

    /// Waypoint by 1-based index, where index 0 is the implicit origin.
    pub fn waypoint(&self, index: usize) -> Waypoint {
        if index == 0 {
            Vec2::ZERO
        } else {
            self.points[index - 1]
        }
    }

    /// Lengths of every segment, starting with origin → first waypoint.
    pub fn segment_lengths(&self) -> impl Iterator<Item = f64> + '_ {
        std::iter::once(Vec2::ZERO)
            .chain(self.points.iter().copied())
            .zip(self.points.iter().copied())
            .map(|(a, b)| (b - a).norm())
    }

    pub fn path_length(&self) -> f64 {
        self.segment_lengths().sum()
    }

    /// Rigid rotation about the origin.
    pub fn rotated(&self, theta: f64) -> Trajectory {
        Trajectory {
            points: self.points.iter().map(|p| p.rotate(theta)).collect(),
        }
    }

    /// CSV rows `t,x,y` with `t` the 1-based waypoint index.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,x,y\n");
        for (i, p) in self.points.iter().enumerate() {
            let _ = writeln!(out, "{},{},{}", i + 1, p.x, p.y);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TrajError> {
        let mut points = Vec::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (line_no == 0 && line.starts_with('t')) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(TrajError::Csv(format!("line {}: expected 3 fields", line_no + 1)));
            }
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| TrajError::Csv(format!("line {}: {e}", line_no + 1)))
            };
            points.push(Vec2::new(parse(fields[1])?, parse(fields[2])?));
        }
        Trajectory::new(points)
    }
}

/// Metric distance between consecutive waypoints, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Scale(f64);

impl Scale {
    pub fn new(value: f64) -> Result<Self, TrajError> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(TrajError::InvalidScale(value))
        }
    }

    /// The hand-tuned constant `v_max / f` used by velocity-control deployments.
    pub fn constant_baseline(v_max: f64, frequency: f64) -> Result<Self, TrajError> {
        Self::new(v_max / frequency)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Unit-scale consecutive displacements `a_t - a_{t-1}` (origin first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deltas(pub Vec<Vec2>);

/// Stats-normalized deltas; components lie in `[-1, 1]` for in-range inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedAction(pub Vec<Vec2>);

impl NormalizedAction {
    pub fn flatten(&self) -> Vec<f64> {
        self.0.iter().flat_map(|v| [v.x, v.y]).collect()
    }

    pub fn from_flat(values: &[f64]) -> Self {
        Self(values.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect())
    }
}

/// Per-axis bounds over unit-scale deltas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionStats {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Default for ActionStats {
    /// Fallback bounds of `±2.5` on both axes.
    fn default() -> Self {
        Self {
            x_min: -2.5,
            x_max: 2.5,
            y_min: -2.5,
            y_max: 2.5,
        }
    }
}

impl ActionStats {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self, TrajError> {
        for (axis, min, max) in [('x', x_min, x_max), ('y', y_min, y_max)] {
            if !(min < max) || !min.is_finite() || !max.is_finite() {
                return Err(TrajError::DegenerateStats { axis, min, max });
            }
        }
        Ok(Self {
            x_min,
            x_max,
            y_min,
            y_max,
        })
    }

    /// Tight bounds over a corpus of unit-scale deltas.
    pub fn from_deltas<'a, I>(deltas: I) -> Result<Self, TrajError>
    where
        I: IntoIterator<Item = &'a Deltas>,
    {
        let (mut x_min, mut x_max, mut y_min, mut y_max) =
            (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for d in deltas {
            for v in &d.0 {
                x_min = x_min.min(v.x);
                x_max = x_max.max(v.x);
                y_min = y_min.min(v.y);
                y_max = y_max.max(v.y);
            }
        }
        Self::new(x_min, x_max, y_min, y_max)
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x_min, self.x_max)
    }

    pub fn y_range(&self) -> (f64, f64) {
        (self.y_min, self.y_max)
    }

    /// Half-span per axis: `d(unit delta) / d(normalized value)`.
    pub fn half_span(&self) -> Vec2 {
        Vec2::new(
            0.5 * (self.x_max - self.x_min),
            0.5 * (self.y_max - self.y_min),
        )
    }
}

/// Mean length of the consecutive segments, the first one starting at the origin.
pub fn segment_scale(traj: &Trajectory) -> Result<Scale, TrajError> {
    if traj.horizon() < 2 {
        return Err(TrajError::TooShort {
            needed: 2,
            got: traj.horizon(),
        });
    }
    let total = traj.path_length();
    if total <= 0.0 {
        return Err(TrajError::ZeroLengthTrajectory);
    }
    Scale::new(total / traj.horizon() as f64)
}

/// Consecutive differences with the implicit origin as anchor.
pub fn differentiate(traj: &Trajectory) -> Deltas {
    let mut prev = Vec2::ZERO;
    Deltas(
        traj.points()
            .iter()
            .map(|&p| {
                let d = p - prev;
                prev = p;
                d
            })
            .collect(),
    )
}

/// Cumulative sum of deltas starting from the origin.
pub fn integrate(deltas: &Deltas) -> Trajectory {
    let mut acc = Vec2::ZERO;
    Trajectory {
        points: deltas
            .0
            .iter()
            .map(|&d| {
                acc += d;
                acc
            })
            .collect(),
    }
}

/// First normalization stage: divide by the segment scale and take deltas.
pub fn normalize(traj: &Trajectory) -> Result<(Deltas, Scale), TrajError> {
    let scale = segment_scale(traj)?;
    let inv = 1.0 / scale.value();
    let unit = Trajectory {
        points: traj.points().iter().map(|&p| p * inv).collect(),
    };
    Ok((differentiate(&unit), scale))
}

/// Second stage: per-axis affine map of bounds onto `[-1, 1]`.
pub fn stats_normalize(deltas: &Deltas, stats: &ActionStats) -> NormalizedAction {
    let map = |v: f64, min: f64, max: f64| 2.0 * (v - min) / (max - min) - 1.0;
    NormalizedAction(
        deltas
            .0
            .iter()
            .map(|d| {
                Vec2::new(
                    map(d.x, stats.x_min, stats.x_max),
                    map(d.y, stats.y_min, stats.y_max),
                )
            })
            .collect(),
    )
}

/// Exact inverse of [`stats_normalize`].
pub fn stats_denormalize(action: &NormalizedAction, stats: &ActionStats) -> Deltas {
    let unmap = |v: f64, min: f64, max: f64| (v + 1.0) * 0.5 * (max - min) + min;
    Deltas(
        action
            .0
            .iter()
            .map(|a| {
                Vec2::new(
                    unmap(a.x, stats.x_min, stats.x_max),
                    unmap(a.y, stats.y_min, stats.y_max),
                )
            })
            .collect(),
    )
}

/// Multiplies every coordinate by the scale.
pub fn apply_scale(unit: &Trajectory, scale: Scale) -> Trajectory {
    let s = scale.value();
    Trajectory {
        points: unit.points().iter().map(|&p| p * s).collect(),
    }
}

/// Normalized action → unit-scale trajectory (denormalize then integrate).
pub fn unit_trajectory(action: &NormalizedAction, stats: &ActionStats) -> Trajectory {
    integrate(&stats_denormalize(action, stats))
}
