use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::edt::edt_sq;
use super::{PerceptError, PointCloud, PointLabel};
use crate::geom::Vec2;

const MAGIC: &[u8; 4] = b"GNTS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsdfParams {
    pub resolution: f64,
    /// Window size along x (forward), meters.
    pub extent_x: f64,
    /// Window size along y (left), meters.
    pub extent_y: f64,
    /// Forward offset of the window center from the robot.
    pub center_ahead: f64,
    pub tau_free: f64,
    pub tau_obs: f64,
    pub dilation_cells: usize,
}

impl Default for TsdfParams {
    fn default() -> Self {
        Self {
            resolution: 0.05,
            extent_x: 6.0,
            extent_y: 6.0,
            center_ahead: 2.5,
            tau_free: 1.0,
            tau_obs: 0.3,
            dilation_cells: 1,
        }
    }
}

impl TsdfParams {
    fn validate(&self) -> Result<(), PerceptError> {
        let ok = self.resolution > 0.0
            && self.extent_x >= self.resolution
            && self.extent_y >= self.resolution
            && self.tau_free > 0.0
            && self.tau_obs > 0.0
            && self.center_ahead.is_finite();
        if ok {
            Ok(())
        } else {
            Err(PerceptError::InvalidParams(format!("{self:?}")))
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (
            (self.extent_x / self.resolution).round() as usize + 1,
            (self.extent_y / self.resolution).round() as usize + 1,
        )
    }

    pub fn origin(&self) -> Vec2 {
        Vec2::new(self.center_ahead - 0.5 * self.extent_x, -0.5 * self.extent_y)
    }
}

/// Truncated signed distance samples on a regular node lattice.
///
/// Node `(i, j)` sits at `origin + (i, j) * resolution`; values are stored
/// row-major with `i` (x) varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Tsdf {
    origin: Vec2,
    resolution: f64,
    nx: usize,
    ny: usize,
    values: Vec<f32>,
    tau_free: f64,
    tau_obs: f64,
}

/// Result of a bilinear lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsdfSample {
    pub value: f64,
    pub gradient: Vec2,
    pub in_bounds: bool,
}

/// Polyline drawn on top of [`Tsdf::svg_heatmap`].
#[derive(Debug, Clone, PartialEq)]
pub struct SvgPolyline {
    pub points: Vec<Vec2>,
    pub color: String,
    pub width: f64,
}

/// Projects obstacle-labeled points onto the floor lattice and signs the distance field.
pub fn build_tsdf(cloud: &PointCloud, params: &TsdfParams) -> Result<Tsdf, PerceptError> {
    params.validate()?;
    let (nx, ny) = params.dims();
    let origin = params.origin();
    let mut occupied = vec![false; nx * ny];
    for p in cloud.labeled(PointLabel::Obstacle) {
        let i = ((p.x - origin.x) / params.resolution).round();
        let j = ((p.y - origin.y) / params.resolution).round();
        if i >= 0.0 && j >= 0.0 && (i as usize) < nx && (j as usize) < ny {
            occupied[j as usize * nx + i as usize] = true;
        }
    }
    Tsdf::from_occupancy(&occupied, nx, ny, origin, params)
}

impl Tsdf {
    /// Signs the field from raw obstacle nodes (dilated here by `params.dilation_cells`).
    pub fn from_occupancy(
        occupied: &[bool],
        nx: usize,
        ny: usize,
        origin: Vec2,
        params: &TsdfParams,
    ) -> Result<Self, PerceptError> {
        params.validate()?;
        if occupied.len() != nx * ny || nx < 2 || ny < 2 {
            return Err(PerceptError::InvalidParams(format!(
                "occupancy of {} cells for a {nx}x{ny} grid",
                occupied.len()
            )));
        }
        let dilated = dilate(occupied, nx, ny, params.dilation_cells);
        let to_obstacle = edt_sq(&dilated, nx, ny);
        let free: Vec<bool> = dilated.iter().map(|d| !d).collect();
        let to_free = edt_sq(&free, nx, ny);
        let res = params.resolution;
        let values = (0..nx * ny)
            .map(|c| {
                let v = if dilated[c] {
                    -(to_free[c].sqrt() - 0.5) * res
                } else {
                    (to_obstacle[c].sqrt() - 0.5) * res
                };
                v.clamp(-params.tau_obs, params.tau_free) as f32
            })
            .collect();
        Ok(Self {
            origin,
            resolution: res,
            nx,
            ny,
            values,
            tau_free: params.tau_free,
            tau_obs: params.tau_obs,
        })
    }

    pub fn origin(&self) -> Vec2 {
        self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn tau_free(&self) -> f64 {
        self.tau_free
    }

    pub fn tau_obs(&self) -> f64 {
        self.tau_obs
    }

    pub fn node(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i] as f64
    }

    pub fn node_position(&self, i: usize, j: usize) -> Vec2 {
        self.origin + Vec2::new(i as f64, j as f64) * self.resolution
    }

    pub fn upper_corner(&self) -> Vec2 {
        self.node_position(self.nx - 1, self.ny - 1)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let hi = self.upper_corner();
        p.x >= self.origin.x && p.y >= self.origin.y && p.x <= hi.x && p.y <= hi.y
    }

    /// Bilinear value and its analytic gradient. Outside the lattice the
    /// value at the clamped point is returned with a zero gradient.
    pub fn value_grad(&self, p: Vec2) -> TsdfSample {
        let in_bounds = self.contains(p);
        let hi = self.upper_corner();
        let q = if in_bounds {
            p
        } else {
            Vec2::new(p.x.clamp(self.origin.x, hi.x), p.y.clamp(self.origin.y, hi.y))
        };
        let fx = snap((q.x - self.origin.x) / self.resolution);
        let fy = snap((q.y - self.origin.y) / self.resolution);
        let i = (fx.floor() as usize).min(self.nx - 2);
        let j = (fy.floor() as usize).min(self.ny - 2);
        let tx = fx - i as f64;
        let ty = fy - j as f64;
        let v00 = self.node(i, j);
        let v10 = self.node(i + 1, j);
        let v01 = self.node(i, j + 1);
        let v11 = self.node(i + 1, j + 1);
        let value = v00 * (1.0 - tx) * (1.0 - ty) + v10 * tx * (1.0 - ty) + v01 * (1.0 - tx) * ty + v11 * tx * ty;
        let gradient = if in_bounds {
            Vec2::new(
                ((v10 - v00) * (1.0 - ty) + (v11 - v01) * ty) / self.resolution,
                ((v01 - v00) * (1.0 - tx) + (v11 - v10) * tx) / self.resolution,
            )
        } else {
            Vec2::ZERO
        };
        TsdfSample {
            value,
            gradient,
            in_bounds,
        }
    }

    pub fn value(&self, p: Vec2) -> f64 {
        self.value_grad(p).value
    }

    /// Binary dump: magic, version, origin, resolution, dims, bands, then
    /// row-major little-endian `f32` values.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), PerceptError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in [self.origin.x, self.origin.y, self.resolution] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.nx as u32).to_le_bytes())?;
        w.write_all(&(self.ny as u32).to_le_bytes())?;
        for v in [self.tau_free, self.tau_obs] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, PerceptError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(PerceptError::Format("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(PerceptError::Format(format!("unsupported version {version}")));
        }
        let origin = Vec2::new(read_f64(r)?, read_f64(r)?);
        let resolution = read_f64(r)?;
        let nx = read_u32(r)? as usize;
        let ny = read_u32(r)? as usize;
        let tau_free = read_f64(r)?;
        let tau_obs = read_f64(r)?;
        if nx < 2 || ny < 2 || !(resolution > 0.0) || nx.saturating_mul(ny) > 1 << 26 {
            return Err(PerceptError::Format(format!("bad header {nx}x{ny} @ {resolution}")));
        }
        let mut buf = vec![0u8; nx * ny * 4];
        r.read_exact(&mut buf)?;
        let values = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            origin,
            resolution,
            nx,
            ny,
            values,
            tau_free,
            tau_obs,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), PerceptError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PerceptError> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Heatmap with forward pointing up and left pointing left.
    pub fn svg_heatmap(&self, px_per_m: f64, overlays: &[SvgPolyline]) -> String {
        let hi = self.upper_corner();
        let w = (hi.y - self.origin.y) * px_per_m;
        let h = (hi.x - self.origin.x) * px_per_m;
        let to_px = |p: Vec2| ((hi.y - p.y) * px_per_m, (hi.x - p.x) * px_per_m);
        let stride = self.nx.max(self.ny).div_ceil(80).max(1);
        let cell = stride as f64 * self.resolution * px_per_m;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#
        );
        for j in (0..self.ny).step_by(stride) {
            for i in (0..self.nx).step_by(stride) {
                let (x, y) = to_px(self.node_position(i, j));
                let color = heat_color(self.node(i, j), self.tau_obs, self.tau_free);
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{:.1}" width="{cell:.1}" height="{cell:.1}" fill="{color}"/>"#,
                    x - 0.5 * cell,
                    y - 0.5 * cell
                );
            }
        }
        for line in overlays {
            let pts: Vec<String> = line
                .points
                .iter()
                .map(|p| {
                    let (x, y) = to_px(*p);
                    format!("{x:.1},{y:.1}")
                })
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="{}"/>"#,
                pts.join(" "),
                line.color,
                line.width
            );
        }
        let (rx, ry) = to_px(Vec2::ZERO);
        let _ = writeln!(s, r#"<circle cx="{rx:.1}" cy="{ry:.1}" r="4" fill="black"/>"#);
        s.push_str("</svg>\n");
        s
    }
}

/// Absorbs round-off so queries at node positions hit the stored value exactly.
fn snap(f: f64) -> f64 {
    let r = f.round();
    if (f - r).abs() < 1e-9 {
        r
    } else {
        f
    }
}

fn heat_color(v: f64, tau_obs: f64, tau_free: f64) -> String {
    if v < 0.0 {
        let t = (-v / tau_obs).clamp(0.0, 1.0);
        let g = (200.0 * (1.0 - t)) as u8;
        format!("rgb(220,{g},{g})")
    } else {
        let t = (v / tau_free).clamp(0.0, 1.0);
        let r = (255.0 * (1.0 - 0.7 * t)) as u8;
        let g = (255.0 * (1.0 - 0.4 * t)) as u8;
        format!("rgb({r},{g},255)")
    }
}

fn dilate(occupied: &[bool], nx: usize, ny: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return occupied.to_vec();
    }
    let mut out = vec![false; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            if !occupied[j * nx + i] {
                continue;
            }
            for jj in j.saturating_sub(radius)..=(j + radius).min(ny - 1) {
                for ii in i.saturating_sub(radius)..=(i + radius).min(nx - 1) {
                    out[jj * nx + ii] = true;
                }
            }
        }
    }
    out
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, PerceptError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, PerceptError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
