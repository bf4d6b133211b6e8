use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::{SimError, WorldMap};
use crate::geom::{Segment, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertParams {
    pub resolution: f64,
    /// Minimum wall distance along the whole path.
    pub clearance: f64,
    /// Clearance above which no centering penalty applies.
    pub preferred_clearance: f64,
    pub centering_weight: f64,
    pub spacing: f64,
    /// Longest straight shortcut considered while smoothing.
    pub max_shortcut: f64,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            clearance: 0.25,
            preferred_clearance: 0.5,
            centering_weight: 4.0,
            spacing: 0.25,
            max_shortcut: 3.0,
        }
    }
}

/// Smoothed collision-free route and its fixed-spacing resampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertPath {
    pub polyline: Vec<Vec2>,
    pub points: Vec<Vec2>,
    pub spacing: f64,
}

impl ExpertPath {
    pub fn length(&self) -> f64 {
        polyline_length(&self.polyline)
    }
}

pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Points at arc lengths `0, spacing, 2 * spacing, ...` along `polyline`.
pub fn resample(polyline: &[Vec2], spacing: f64) -> Vec<Vec2> {
    let Some(&first) = polyline.first() else {
        return Vec::new();
    };
    let total = polyline_length(polyline);
    let count = (total / spacing + 1e-9).floor() as usize;
    let mut out = Vec::with_capacity(count + 1);
    out.push(first);
    let (mut seg, mut seg_start) = (0usize, 0.0f64);
    for k in 1..=count {
        let s = k as f64 * spacing;
        while seg + 1 < polyline.len() - 1 && seg_start + polyline[seg].distance(polyline[seg + 1]) < s {
            seg_start += polyline[seg].distance(polyline[seg + 1]);
            seg += 1;
        }
        let (a, b) = (polyline[seg], polyline[seg + 1]);
        let len = a.distance(b);
        let t = if len > 0.0 { ((s - seg_start) / len).clamp(0.0, 1.0) } else { 0.0 };
        out.push(a + (b - a) * t);
    }
    out
}

/// Point at arc length `s` along `polyline` (clamped to its ends).
pub fn point_at(polyline: &[Vec2], s: f64) -> Vec2 {
    let mut acc = 0.0;
    for w in polyline.windows(2) {
        let len = w[0].distance(w[1]);
        if acc + len >= s && len > 0.0 {
            return w[0] + (w[1] - w[0]) * ((s - acc) / len).clamp(0.0, 1.0);
        }
        acc += len;
    }
    *polyline.last().expect("non-empty polyline")
}

struct Grid {
    origin: Vec2,
    res: f64,
    nx: usize,
    ny: usize,
    clearance: Vec<f64>,
}

impl Grid {
    fn build(world: &WorldMap, p: &ExpertParams) -> Self {
        let (min, max) = world.bounds();
        let origin = min;
        let nx = ((max.x - min.x) / p.resolution).round() as usize + 1;
        let ny = ((max.y - min.y) / p.resolution).round() as usize + 1;
        let cap = p.preferred_clearance + p.resolution;
        let mut clearance = vec![0.0; nx * ny];
        for j in 0..ny {
            for i in 0..nx {
                let q = origin + Vec2::new(i as f64, j as f64) * p.resolution;
                clearance[j * nx + i] = world.distance_within(q, cap).unwrap_or(cap);
            }
        }
        Self {
            origin,
            res: p.resolution,
            nx,
            ny,
            clearance,
        }
    }

    fn pos(&self, c: usize) -> Vec2 {
        self.origin + Vec2::new((c % self.nx) as f64, (c / self.nx) as f64) * self.res
    }

    fn nearest(&self, p: Vec2) -> Option<usize> {
        let i = ((p.x - self.origin.x) / self.res).round();
        let j = ((p.y - self.origin.y) / self.res).round();
        (i >= 0.0 && j >= 0.0 && (i as usize) < self.nx && (j as usize) < self.ny)
            .then(|| j as usize * self.nx + i as usize)
    }
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    cell: usize,
}

impl Eq for Open {}

impl Ord for Open {
    fn cmp(&self, o: &Self) -> Ordering {
        o.f.total_cmp(&self.f).then_with(|| o.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// Grid A* with a centering penalty, followed by clearance-preserving
/// shortcut smoothing and fixed-spacing resampling.
pub fn expert_path(world: &WorldMap, start: Vec2, goal: Vec2, params: &ExpertParams) -> Result<ExpertPath, SimError> {
    let no_path = || SimError::NoPath {
        from: (start.x, start.y),
        to: (goal.x, goal.y),
    };
    if world.distance(start) < params.clearance || world.distance(goal) < params.clearance {
        return Err(no_path());
    }
    let grid = Grid::build(world, params);
    // Inflate by one cell so straight moves between free nodes stay clear.
    let free = |c: usize| grid.clearance[c] >= params.clearance + params.resolution;
    let s = grid.nearest(start).filter(|&c| free(c)).ok_or_else(no_path)?;
    let g = grid.nearest(goal).filter(|&c| free(c)).ok_or_else(no_path)?;
    let step_cost = |a: usize, b: usize| {
        let len = grid.pos(a).distance(grid.pos(b));
        let c = 0.5 * (grid.clearance[a] + grid.clearance[b]);
        let deficit = ((params.preferred_clearance - c) / params.preferred_clearance).max(0.0);
        len * (1.0 + params.centering_weight * deficit)
    };
    let heuristic = |c: usize| {
        let d = grid.pos(c) - grid.pos(g);
        let (dx, dy) = (d.x.abs(), d.y.abs());
        dx.max(dy) + (std::f64::consts::SQRT_2 - 1.0) * dx.min(dy)
    };
    let n = grid.nx * grid.ny;
    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    cost[s] = 0.0;
    open.push(Open { f: heuristic(s), cell: s });
    while let Some(Open { cell, .. }) = open.pop() {
        if closed[cell] {
            continue;
        }
        closed[cell] = true;
        if cell == g {
            break;
        }
        let (ci, cj) = ((cell % grid.nx) as i64, (cell / grid.nx) as i64);
        for (di, dj) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let (ni, nj) = (ci + di, cj + dj);
            if ni < 0 || nj < 0 || ni >= grid.nx as i64 || nj >= grid.ny as i64 {
                continue;
            }
            let nb = nj as usize * grid.nx + ni as usize;
            if closed[nb] || !free(nb) {
                continue;
            }
            let c = cost[cell] + step_cost(cell, nb);
            if c < cost[nb] {
                cost[nb] = c;
                parent[nb] = cell;
                open.push(Open { f: c + heuristic(nb), cell: nb });
            }
        }
    }
    if !closed[g] {
        return Err(no_path());
    }
    let mut cells = vec![g];
    while let Some(&c) = cells.last() {
        if c == s {
            break;
        }
        cells.push(parent[c]);
    }
    cells.reverse();
    let mut raw: Vec<Vec2> = Vec::with_capacity(cells.len() + 2);
    raw.push(start);
    raw.extend(cells.iter().map(|&c| grid.pos(c)));
    raw.push(goal);
    raw.dedup_by(|a, b| a.distance(*b) < 1e-12);
    let cap = params.preferred_clearance + params.resolution;
    let seg_clear = |a: Vec2, b: Vec2| world.segment_clearance_within(&Segment::new(a, b), cap).unwrap_or(cap);
    let edge_clear: Vec<f64> = raw.windows(2).map(|w| seg_clear(w[0], w[1])).collect();
    if edge_clear.iter().any(|&c| c < params.clearance) {
        return Err(no_path());
    }
    let polyline = shortcut(&raw, &edge_clear, params, seg_clear);
    let points = resample(&polyline, params.spacing);
    Ok(ExpertPath {
        polyline,
        points,
        spacing: params.spacing,
    })
}

fn shortcut(raw: &[Vec2], edge_clear: &[f64], params: &ExpertParams, seg_clear: impl Fn(Vec2, Vec2) -> f64) -> Vec<Vec2> {
    let mut out = vec![raw[0]];
    let mut i = 0;
    while i + 1 < raw.len() {
        let mut next = i + 1;
        let mut portion_min = edge_clear[i];
        let mut best = next;
        let mut j = i + 1;
        while j + 1 < raw.len() && raw[i].distance(raw[j + 1]) <= params.max_shortcut {
            portion_min = portion_min.min(edge_clear[j]);
            j += 1;
            let c = seg_clear(raw[i], raw[j]);
            if c >= params.clearance && c >= portion_min - 1e-9 {
                best = j;
            }
        }
        next = next.max(best);
        out.push(raw[next]);
        i = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corridor() -> WorldMap {
        WorldMap::new(
            "corridor",
            vec![
                Segment::new(Vec2::new(0.0, 0.0), Vec2::new(6.0, 0.0)),
                Segment::new(Vec2::new(0.0, 1.0), Vec2::new(6.0, 1.0)),
            ],
            2.5,
        )
        .unwrap()
    }

    #[test]
    fn straight_corridor_gives_straight_line() {
        let world = corridor();
        let path = expert_path(&world, Vec2::new(0.5, 0.5), Vec2::new(5.5, 0.5), &ExpertParams::default()).unwrap();
        assert!(path.polyline.len() <= 4, "{:?}", path.polyline);
        for p in &path.points {
            assert!((p.y - 0.5).abs() < 1e-9, "{p:?}");
        }
        assert_eq!(path.points.len(), 21);
        for w in path.points.windows(2) {
            assert!((w[0].distance(w[1]) - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn u_obstacle_respects_clearance() {
        let walls = vec![
            Segment::new(Vec2::new(0.0, 0.0), Vec2::new(6.0, 0.0)),
            Segment::new(Vec2::new(6.0, 0.0), Vec2::new(6.0, 6.0)),
            Segment::new(Vec2::new(6.0, 6.0), Vec2::new(0.0, 6.0)),
            Segment::new(Vec2::new(0.0, 6.0), Vec2::new(0.0, 0.0)),
            Segment::new(Vec2::new(2.0, 2.0), Vec2::new(4.0, 2.0)),
            Segment::new(Vec2::new(4.0, 2.0), Vec2::new(4.0, 4.0)),
            Segment::new(Vec2::new(2.0, 4.0), Vec2::new(4.0, 4.0)),
        ];
        let world = WorldMap::new("u", walls, 2.5).unwrap();
        let params = ExpertParams::default();
        let path = expert_path(&world, Vec2::new(3.0, 3.0), Vec2::new(5.0, 3.0), &params).unwrap();
        for w in path.polyline.windows(2) {
            let c = world.walls().iter().map(|s| s.distance_to_segment(&Segment::new(w[0], w[1]))).fold(f64::INFINITY, f64::min);
            assert!(c >= params.clearance, "clearance {c}");
        }
        assert!(path.length() > 4.0);
    }

    #[test]
    fn unreachable_goal() {
        let walls = vec![
            Segment::new(Vec2::new(0.0, 0.0), Vec2::new(4.0, 0.0)),
            Segment::new(Vec2::new(4.0, 0.0), Vec2::new(4.0, 4.0)),
            Segment::new(Vec2::new(4.0, 4.0), Vec2::new(0.0, 4.0)),
            Segment::new(Vec2::new(0.0, 4.0), Vec2::new(0.0, 0.0)),
            Segment::new(Vec2::new(2.0, 0.0), Vec2::new(2.0, 4.0)),
        ];
        let world = WorldMap::new("split", walls, 2.5).unwrap();
        assert!(matches!(
            expert_path(&world, Vec2::new(1.0, 2.0), Vec2::new(3.0, 2.0), &ExpertParams::default()),
            Err(SimError::NoPath { .. })
        ));
    }

    #[test]
    fn resample_spacing() {
        let poly = [Vec2::ZERO, Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0)];
        let pts = resample(&poly, 0.3);
        assert_eq!(pts.len(), 7);
        assert!((pts[4] - Vec2::new(1.0, 0.2)).norm() < 1e-12);
        assert!((point_at(&poly, 1.5) - Vec2::new(1.0, 0.5)).norm() < 1e-12);
        assert_eq!(point_at(&poly, 9.0), Vec2::new(1.0, 1.0));
    }
}
