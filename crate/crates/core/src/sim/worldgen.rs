use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SimError, WorldMap};
use crate::geom::{Segment, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WorldKind {
    /// Braided block maze with a few open rooms.
    Maze,
    /// Wider cells with small square pillars that force tight maneuvers.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldGenParams {
    pub cols: usize,
    pub rows: usize,
    pub cell: f64,
    /// Probability of opening an extra passage at a dead end.
    pub braid: f64,
    pub rooms: usize,
    pub pillar_prob: f64,
    pub pillar_size: f64,
    pub wall_height: f64,
}

impl Default for WorldGenParams {
    fn default() -> Self {
        Self::for_kind(WorldKind::Maze)
    }
}

impl WorldGenParams {
    pub fn for_kind(kind: WorldKind) -> Self {
        match kind {
            WorldKind::Maze => Self {
                cols: 7,
                rows: 7,
                cell: 0.8,
                braid: 0.15,
                rooms: 2,
                pillar_prob: 0.0,
                pillar_size: 0.25,
                wall_height: 2.5,
            },
            WorldKind::Dense => Self {
                cols: 5,
                rows: 5,
                cell: 1.2,
                braid: 0.3,
                rooms: 1,
                pillar_prob: 0.5,
                pillar_size: 0.25,
                wall_height: 2.5,
            },
        }
    }
}

const E: usize = 0;
const N: usize = 1;

/// Random maze: depth-first spanning tree, braided dead ends, 2x2 rooms,
/// and optionally one off-center pillar per cell. Collinear wall pieces are
/// merged into single segments.
pub fn generate_world(name: &str, params: &WorldGenParams, seed: u64) -> Result<WorldMap, SimError> {
    let (cols, rows) = (params.cols, params.rows);
    if cols < 2 || rows < 2 || !(params.cell > 0.0) {
        return Err(SimError::InvalidWorld(format!("grid {cols}x{rows} cell {}", params.cell)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // wall[c][E]: wall between (i,j) and (i+1,j); wall[c][N]: between (i,j) and (i,j+1).
    let mut wall = vec![[true, true]; cols * rows];
    let idx = |i: usize, j: usize| j * cols + i;
    let neighbors = |c: usize| {
        let (i, j) = (c % cols, c / cols);
        let mut out = Vec::with_capacity(4);
        if i + 1 < cols {
            out.push(idx(i + 1, j));
        }
        if i > 0 {
            out.push(idx(i - 1, j));
        }
        if j + 1 < rows {
            out.push(idx(i, j + 1));
        }
        if j > 0 {
            out.push(idx(i, j - 1));
        }
        out
    };
    let open = |wall: &mut Vec<[bool; 2]>, a: usize, b: usize| {
        let (lo, hi) = (a.min(b), a.max(b));
        if hi == lo + 1 {
            wall[lo][E] = false;
        } else {
            wall[lo][N] = false;
        }
    };
    let is_open = |wall: &Vec<[bool; 2]>, a: usize, b: usize| {
        let (lo, hi) = (a.min(b), a.max(b));
        !(if hi == lo + 1 { wall[lo][E] } else { wall[lo][N] })
    };

    let mut visited = vec![false; cols * rows];
    let start = rng.random_range(0..cols * rows);
    let mut stack = vec![start];
    visited[start] = true;
    while let Some(&c) = stack.last() {
        let mut fresh: Vec<usize> = neighbors(c).into_iter().filter(|&n| !visited[n]).collect();
        if fresh.is_empty() {
            stack.pop();
            continue;
        }
        fresh.shuffle(&mut rng);
        let n = fresh[0];
        open(&mut wall, c, n);
        visited[n] = true;
        stack.push(n);
    }

    for c in 0..cols * rows {
        let nb = neighbors(c);
        let degree = nb.iter().filter(|&&n| is_open(&wall, c, n)).count();
        if degree == 1 && rng.random_bool(params.braid.clamp(0.0, 1.0)) {
            let closed: Vec<usize> = nb.into_iter().filter(|&n| !is_open(&wall, c, n)).collect();
            if let Some(&n) = closed.get(rng.random_range(0..closed.len().max(1))) {
                open(&mut wall, c, n);
            }
        }
    }

    let mut room_cells = vec![false; cols * rows];
    for _ in 0..params.rooms {
        let (i, j) = (rng.random_range(0..cols - 1), rng.random_range(0..rows - 1));
        wall[idx(i, j)] = [false, false];
        wall[idx(i + 1, j)][N] = false;
        wall[idx(i, j + 1)][E] = false;
        for c in [idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1)] {
            room_cells[c] = true;
        }
    }

    let s = params.cell;
    let mut walls = Vec::new();
    // Horizontal lines y = j * s for j in 0..=rows.
    for j in 0..=rows {
        let present = |i: usize| j == 0 || j == rows || wall[idx(i, j - 1)][N];
        push_runs(&mut walls, cols, present, |a, b| {
            Segment::new(Vec2::new(a as f64 * s, j as f64 * s), Vec2::new(b as f64 * s, j as f64 * s))
        });
    }
    for i in 0..=cols {
        let present = |j: usize| i == 0 || i == cols || wall[idx(i - 1, j)][E];
        push_runs(&mut walls, rows, present, |a, b| {
            Segment::new(Vec2::new(i as f64 * s, a as f64 * s), Vec2::new(i as f64 * s, b as f64 * s))
        });
    }

    if params.pillar_prob > 0.0 {
        let half = 0.5 * params.pillar_size;
        // Every pillar leans toward the same cell corner, so the opposite
        // side of each cell stays open and no passage is ever sealed.
        let lean = Vec2::new(
            if rng.random_bool(0.5) { 1.0 } else { -1.0 },
            if rng.random_bool(0.5) { 1.0 } else { -1.0 },
        );
        for c in 0..cols * rows {
            if room_cells[c] || !rng.random_bool(params.pillar_prob.clamp(0.0, 1.0)) {
                continue;
            }
            let center = Vec2::new(((c % cols) as f64 + 0.5) * s, ((c / cols) as f64 + 0.5) * s);
            let (lo, hi) = (0.15 * s, 0.25 * s);
            let center = center + Vec2::new(lean.x * rng.random_range(lo..hi), lean.y * rng.random_range(lo..hi));
            let corners = [
                center + Vec2::new(-half, -half),
                center + Vec2::new(half, -half),
                center + Vec2::new(half, half),
                center + Vec2::new(-half, half),
            ];
            for k in 0..4 {
                walls.push(Segment::new(corners[k], corners[(k + 1) % 4]));
            }
        }
    }
    WorldMap::new(name, walls, params.wall_height)
}

fn push_runs(walls: &mut Vec<Segment>, n: usize, present: impl Fn(usize) -> bool, make: impl Fn(usize, usize) -> Segment) {
    let mut run: Option<usize> = None;
    for k in 0..=n {
        let on = k < n && present(k);
        match (on, run) {
            (true, None) => run = Some(k),
            (false, Some(a)) => {
                walls.push(make(a, k));
                run = None;
            }
            _ => {}
        }
    }
}

/// Two corridors of `width` meeting at a right angle: east for `leg` meters
/// from the origin, then north for `leg` meters.
pub fn l_corridor(width: f64, leg: f64) -> Result<WorldMap, SimError> {
    let h = 0.5 * width;
    let p = |x: f64, y: f64| Vec2::new(x, y);
    let walls = vec![
        Segment::new(p(-0.5, -h), p(leg + h, -h)),
        Segment::new(p(leg + h, -h), p(leg + h, leg)),
        Segment::new(p(-0.5, h), p(leg - h, h)),
        Segment::new(p(leg - h, h), p(leg - h, leg)),
        Segment::new(p(-0.5, -h), p(-0.5, h)),
        Segment::new(p(leg - h, leg), p(leg + h, leg)),
    ];
    WorldMap::new("l-corridor", walls, 2.5)
}
