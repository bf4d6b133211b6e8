//! Depth frames to signed distance fields.
//!
//! The pipeline is `DepthFrame` → [`depth_to_cloud`] → [`ransac_ground`] →
//! [`build_tsdf`]. Everything lives in the ego frame: x forward, y left, z up,
//! with the floor at z = 0 and the camera `camera_height` above it.

mod edt;
mod ransac;
mod tsdf;

pub use edt::edt_sq;
pub use ransac::{ransac_ground, PlaneModel, RansacParams};
pub use tsdf::{build_tsdf, SvgPolyline, Tsdf, TsdfParams, TsdfSample};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Marker stored in [`DepthFrame::ranges`] for pixels with no return.
pub const INVALID_RANGE: f32 = -1.0;

#[derive(Debug, Error)]
pub enum PerceptError {
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("depth buffer has {got} entries, expected {expected}")]
    FrameSize { expected: usize, got: usize },
    #[error("degenerate cloud: {0}")]
    DegenerateCloud(String),
    #[error("invalid tsdf parameters: {0}")]
    InvalidParams(String),
    #[error("malformed tsdf file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Pinhole intrinsics in pixels. Pixel `(u, v)` has its center at `(u + 0.5, v + 0.5)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Square pixels with the principal point at the image center.
    pub fn from_hfov(width: usize, height: usize, hfov: f64) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * hfov).tan();
        Self {
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
        }
    }

    pub fn validate(&self) -> Result<(), PerceptError> {
        let ok = [self.fx, self.fy, self.cx, self.cy].iter().all(|v| v.is_finite()) && self.fx > 0.0 && self.fy > 0.0;
        if ok {
            Ok(())
        } else {
            Err(PerceptError::InvalidIntrinsics(format!("{self:?}")))
        }
    }

    /// Unit ray through the center of pixel `(u, v)`.
    pub fn ray(&self, u: usize, v: usize) -> Point3 {
        self.ray_at(u as f64 + 0.5, v as f64 + 0.5)
    }

    /// Unit ray through image coordinates `(px, py)`.
    pub fn ray_at(&self, px: f64, py: f64) -> Point3 {
        let d = Point3::new(1.0, -(px - self.cx) / self.fx, -(py - self.cy) / self.fy);
        let n = d.norm();
        Point3::new(d.x / n, d.y / n, d.z / n)
    }
}

/// Metric range image; `ranges` are Euclidean ray lengths, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    pub ranges: Vec<f32>,
    pub intrinsics: Intrinsics,
    pub camera_height: f64,
}

impl DepthFrame {
    pub fn new(
        width: usize,
        height: usize,
        ranges: Vec<f32>,
        intrinsics: Intrinsics,
        camera_height: f64,
    ) -> Result<Self, PerceptError> {
        intrinsics.validate()?;
        if ranges.len() != width * height {
            return Err(PerceptError::FrameSize {
                expected: width * height,
                got: ranges.len(),
            });
        }
        Ok(Self {
            width,
            height,
            ranges,
            intrinsics,
            camera_height,
        })
    }

    pub fn range(&self, u: usize, v: usize) -> Option<f64> {
        let r = self.ranges[v * self.width + u];
        (r.is_finite() && r >= 0.0).then_some(r as f64)
    }

    pub fn valid_count(&self) -> usize {
        self.ranges.iter().filter(|r| r.is_finite() && **r >= 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PointLabel {
    Unlabeled,
    Ground,
    Obstacle,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub labels: Vec<PointLabel>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn labeled(&self, label: PointLabel) -> impl Iterator<Item = Point3> + '_ {
        self.points
            .iter()
            .zip(&self.labels)
            .filter(move |(_, l)| **l == label)
            .map(|(p, _)| *p)
    }
}

/// Back-projects every valid pixel into the ego frame.
pub fn depth_to_cloud(frame: &DepthFrame) -> Result<PointCloud, PerceptError> {
    frame.intrinsics.validate()?;
    let mut points = Vec::with_capacity(frame.valid_count());
    for v in 0..frame.height {
        for u in 0..frame.width {
            if let Some(r) = frame.range(u, v) {
                let d = frame.intrinsics.ray(u, v);
                points.push(Point3::new(d.x * r, d.y * r, frame.camera_height + d.z * r));
            }
        }
    }
    let labels = vec![PointLabel::Unlabeled; points.len()];
    Ok(PointCloud { points, labels })
}

/// Full perception chain from a depth frame to a local distance field.
pub fn perceive(frame: &DepthFrame, ransac: &RansacParams, params: &TsdfParams) -> Result<Tsdf, PerceptError> {
    let cloud = depth_to_cloud(frame)?;
    let labeled = if cloud.len() >= 3 {
        match ransac_ground(&cloud, ransac) {
            Ok((_, labeled)) => labeled,
            Err(PerceptError::DegenerateCloud(_)) => label_all(cloud, PointLabel::Obstacle),
            Err(e) => return Err(e),
        }
    } else {
        label_all(cloud, PointLabel::Obstacle)
    };
    build_tsdf(&labeled, params)
}

fn label_all(mut cloud: PointCloud, label: PointLabel) -> PointCloud {
    cloud.labels = vec![label; cloud.points.len()];
    cloud
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_frame(w: usize, h: usize, r: f32) -> DepthFrame {
        DepthFrame::new(w, h, vec![r; w * h], Intrinsics::from_hfov(w, h, 1.8), 0.3).unwrap()
    }

    #[test]
    fn principal_ray_lands_on_axis() {
        // Odd dimensions put a pixel center exactly on the principal point.
        let mut f = flat_frame(5, 5, INVALID_RANGE);
        f.ranges[2 * 5 + 2] = 3.0;
        let cloud = depth_to_cloud(&f).unwrap();
        assert_eq!(cloud.len(), 1);
        let p = cloud.points[0];
        assert!((p.x - 3.0).abs() < 1e-12 && p.y.abs() < 1e-12 && (p.z - 0.3).abs() < 1e-12);
    }

    #[test]
    fn fronto_parallel_wall() {
        let (w, h) = (31, 9);
        let intr = Intrinsics::from_hfov(w, h, 1.6);
        let mut ranges = Vec::new();
        for v in 0..h {
            for u in 0..w {
                let d = intr.ray(u, v);
                ranges.push((2.0 / d.x) as f32);
            }
        }
        let f = DepthFrame::new(w, h, ranges, intr, 0.3).unwrap();
        let cloud = depth_to_cloud(&f).unwrap();
        assert_eq!(cloud.len(), w * h);
        assert!(cloud.points.iter().all(|p| (p.x - 2.0).abs() < 1e-5));
    }

    #[test]
    fn all_invalid_is_empty() {
        let f = flat_frame(8, 3, INVALID_RANGE);
        assert!(depth_to_cloud(&f).unwrap().is_empty());
        assert!(DepthFrame::new(2, 2, vec![1.0; 3], Intrinsics::from_hfov(2, 2, 1.0), 0.3).is_err());
    }
}
