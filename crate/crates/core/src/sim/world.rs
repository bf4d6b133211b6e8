use std::fmt::Write as _;
use std::path::Path;

use super::SimError;
use crate::geom::{Segment, Vec2};

const INDEX_CELL: f64 = 0.5;

/// Extruded-wall environment: vertical walls of `wall_height` standing on the
/// floor plane along each segment.
#[derive(Debug, Clone)]
pub struct WorldMap {
    name: String,
    walls: Vec<Segment>,
    wall_height: f64,
    min: Vec2,
    max: Vec2,
    index: SegmentIndex,
}

impl PartialEq for WorldMap {
    fn eq(&self, o: &Self) -> bool {
        self.name == o.name && self.walls == o.walls && self.wall_height == o.wall_height
    }
}

impl WorldMap {
    pub fn new(name: impl Into<String>, walls: Vec<Segment>, wall_height: f64) -> Result<Self, SimError> {
        if walls.iter().any(|w| !w.a.is_finite() || !w.b.is_finite()) {
            return Err(SimError::InvalidWorld("non-finite wall coordinate".into()));
        }
        if !(wall_height > 0.0) {
            return Err(SimError::InvalidWorld(format!("wall height {wall_height}")));
        }
        let (mut min, mut max) = (Vec2::new(f64::INFINITY, f64::INFINITY), Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
        for w in &walls {
            let (lo, hi) = w.bbox();
            min = Vec2::new(min.x.min(lo.x), min.y.min(lo.y));
            max = Vec2::new(max.x.max(hi.x), max.y.max(hi.y));
        }
        if walls.is_empty() {
            min = Vec2::ZERO;
            max = Vec2::ZERO;
        }
        let index = SegmentIndex::build(&walls, min, max);
        Ok(Self {
            name: name.into(),
            walls,
            wall_height,
            min,
            max,
            index,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn walls(&self) -> &[Segment] {
        &self.walls
    }

    pub fn wall_height(&self) -> f64 {
        self.wall_height
    }

    pub fn bounds(&self) -> (Vec2, Vec2) {
        (self.min, self.max)
    }

    /// Exact distance from `p` to the nearest wall, if one lies within `radius`.
    pub fn distance_within(&self, p: Vec2, radius: f64) -> Option<f64> {
        let mut best = f64::INFINITY;
        self.index.for_each_near(p, radius, |i| {
            best = best.min(self.walls[i].distance_to(p));
        });
        (best <= radius).then_some(best)
    }

    /// Exact distance to the nearest wall (infinite for an empty world).
    pub fn distance(&self, p: Vec2) -> f64 {
        let diag = (self.max - self.min).norm() + (p - self.min).norm() + 1.0;
        let mut r = 1.0;
        loop {
            if let Some(d) = self.distance_within(p, r) {
                return d;
            }
            if r > diag {
                return f64::INFINITY;
            }
            r *= 2.0;
        }
    }

    /// Indices of walls that may lie within `radius` of `p`, sorted and unique.
    pub fn walls_near(&self, p: Vec2, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.index.for_each_near(p, radius, |i| out.push(i));
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Exact minimum distance between a straight segment and the walls, if within `radius`.
    pub fn segment_clearance_within(&self, s: &Segment, radius: f64) -> Option<f64> {
        let mid = (s.a + s.b) * 0.5;
        let reach = radius + 0.5 * s.length();
        let mut best = f64::INFINITY;
        self.index.for_each_near(mid, reach, |i| {
            best = best.min(self.walls[i].distance_to_segment(s));
        });
        (best <= radius).then_some(best)
    }

    /// Nearest wall hit along `origin + t * dir` for unit `dir`, up to `max_t`.
    pub fn raycast(&self, origin: Vec2, dir: Vec2, max_t: f64) -> Option<f64> {
        let mut best = f64::INFINITY;
        for w in &self.walls {
            if let Some(t) = w.ray_hit(origin, dir) {
                best = best.min(t);
            }
        }
        (best <= max_t).then_some(best)
    }

    /// Plain-text form: `name`, `wall_height` and one `wall x1 y1 x2 y2` line per segment.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# groundnav world v1\n");
        let _ = writeln!(s, "name {}", self.name);
        let _ = writeln!(s, "wall_height {}", self.wall_height);
        for w in &self.walls {
            let _ = writeln!(s, "wall {} {} {} {}", w.a.x, w.a.y, w.b.x, w.b.y);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SimError> {
        let mut name = String::from("unnamed");
        let mut height = None;
        let mut walls = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| SimError::WorldFormat { line: n + 1, msg };
            let (key, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
            match key {
                "name" => name = rest.trim().to_string(),
                "wall_height" => height = Some(rest.trim().parse::<f64>().map_err(|e| err(e.to_string()))?),
                "wall" => {
                    let v: Vec<f64> = rest
                        .split_whitespace()
                        .map(str::parse)
                        .collect::<Result<_, _>>()
                        .map_err(|e: std::num::ParseFloatError| err(e.to_string()))?;
                    if v.len() != 4 {
                        return Err(err(format!("expected 4 coordinates, got {}", v.len())));
                    }
                    walls.push(Segment::new(Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3])));
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        let height = height.ok_or(SimError::WorldFormat {
            line: 0,
            msg: "missing wall_height".into(),
        })?;
        Self::new(name, walls, height)
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Uniform bucket grid over segment bounding boxes.
#[derive(Debug, Clone)]
struct SegmentIndex {
    origin: Vec2,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl SegmentIndex {
    fn build(walls: &[Segment], min: Vec2, max: Vec2) -> Self {
        let origin = min - Vec2::new(INDEX_CELL, INDEX_CELL);
        let nx = (((max.x - origin.x) / INDEX_CELL).ceil() as usize + 2).max(1);
        let ny = (((max.y - origin.y) / INDEX_CELL).ceil() as usize + 2).max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        for (i, w) in walls.iter().enumerate() {
            let (lo, hi) = w.bbox();
            let (i0, j0) = Self::cell_of(origin, lo);
            let (i1, j1) = Self::cell_of(origin, hi);
            for j in j0.max(0)..=j1.min(ny as i64 - 1) {
                for ii in i0.max(0)..=i1.min(nx as i64 - 1) {
                    // Only keep cells the segment actually comes near.
                    let c = origin + Vec2::new((ii as f64 + 0.5) * INDEX_CELL, (j as f64 + 0.5) * INDEX_CELL);
                    if w.distance_to(c) <= INDEX_CELL * std::f64::consts::FRAC_1_SQRT_2 + 1e-9 {
                        cells[j as usize * nx + ii as usize].push(i as u32);
                    }
                }
            }
        }
        Self { origin, nx, ny, cells }
    }

    fn cell_of(origin: Vec2, p: Vec2) -> (i64, i64) {
        (
            ((p.x - origin.x) / INDEX_CELL).floor() as i64,
            ((p.y - origin.y) / INDEX_CELL).floor() as i64,
        )
    }

    /// Visits every segment that may lie within `radius` of `p` (possibly more than once).
    fn for_each_near(&self, p: Vec2, radius: f64, mut f: impl FnMut(usize)) {
        let (i0, j0) = Self::cell_of(self.origin, p - Vec2::new(radius, radius));
        let (i1, j1) = Self::cell_of(self.origin, p + Vec2::new(radius, radius));
        let (i0, j0) = (i0.max(0), j0.max(0));
        let (i1, j1) = (i1.min(self.nx as i64 - 1), j1.min(self.ny as i64 - 1));
        if i0 > i1 || j0 > j1 {
            return;
        }
        for j in j0..=j1 {
            for i in i0..=i1 {
                for &s in &self.cells[j as usize * self.nx + i as usize] {
                    f(s as usize);
                }
            }
        }
    }
}
