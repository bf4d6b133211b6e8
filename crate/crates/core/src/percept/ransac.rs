use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PerceptError, Point3, PointCloud, PointLabel};

/// Plane `normal · p = offset` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneModel {
    pub normal: Point3,
    pub offset: f64,
    pub threshold: f64,
}

impl PlaneModel {
    pub fn through(a: Point3, b: Point3, c: Point3, threshold: f64) -> Option<Self> {
        let n = b.sub(a).cross(c.sub(a));
        let len = n.norm();
        let scale = b.sub(a).norm() * c.sub(a).norm();
        if !(len > 1e-9 * scale.max(1e-300)) {
            return None;
        }
        // Orient the normal upward so floor planes come out as +z.
        let sign = if n.z < 0.0 { -1.0 } else { 1.0 };
        let normal = Point3::new(sign * n.x / len, sign * n.y / len, sign * n.z / len);
        Some(Self {
            normal,
            offset: normal.dot(a),
            threshold,
        })
    }

    pub fn distance(&self, p: Point3) -> f64 {
        (self.normal.dot(p) - self.offset).abs()
    }

    pub fn is_inlier(&self, p: Point3) -> bool {
        self.distance(p) <= self.threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub iterations: usize,
    pub threshold: f64,
    /// Largest angle between a ground hypothesis' normal and +z, radians.
    pub max_tilt: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 200,
            threshold: 0.02,
            max_tilt: 0.25,
            seed: 0,
        }
    }
}

/// Fits the dominant plane and labels its inliers as ground.
///
/// Each iteration draws three distinct points; among hypotheses tilted at
/// most `max_tilt` from horizontal, the one with the most inliers wins, with
/// ties going to the earliest iteration. Walls often outnumber floor points,
/// so the tilt bound is what keeps a wall from being taken as ground.
pub fn ransac_ground(cloud: &PointCloud, params: &RansacParams) -> Result<(PlaneModel, PointCloud), PerceptError> {
    let n = cloud.len();
    if n < 3 {
        return Err(PerceptError::DegenerateCloud(format!("{n} points")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<(usize, PlaneModel)> = None;
    let min_up = params.max_tilt.cos();
    let mut consider = |plane: PlaneModel| {
        if plane.normal.z.abs() < min_up {
            return;
        }
        let count = cloud.points.iter().filter(|p| plane.is_inlier(**p)).count();
        if best.is_none_or(|(c, _)| count > c) {
            best = Some((count, plane));
        }
    };
    if n == 3 {
        if let Some(plane) = PlaneModel::through(cloud.points[0], cloud.points[1], cloud.points[2], params.threshold) {
            consider(plane);
        }
    } else {
        for _ in 0..params.iterations.max(1) {
            let idx = sample(&mut rng, n, 3);
            let (a, b, c) = (cloud.points[idx.index(0)], cloud.points[idx.index(1)], cloud.points[idx.index(2)]);
            if let Some(plane) = PlaneModel::through(a, b, c, params.threshold) {
                consider(plane);
            }
        }
    }
    let (_, plane) = best.ok_or_else(|| PerceptError::DegenerateCloud("no near-horizontal plane among the samples".into()))?;
    let labels = cloud
        .points
        .iter()
        .map(|p| if plane.is_inlier(*p) { PointLabel::Ground } else { PointLabel::Obstacle })
        .collect();
    Ok((
        plane,
        PointCloud {
            points: cloud.points.clone(),
            labels,
        },
    ))
}
