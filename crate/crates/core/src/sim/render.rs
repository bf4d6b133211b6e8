use serde::{Deserialize, Serialize};

use super::WorldMap;
use crate::geom::{Pose2, Vec2};
use crate::percept::{DepthFrame, Intrinsics, INVALID_RANGE};

/// Forward-looking pinhole depth camera mounted on the robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, radians.
    pub hfov: f64,
    pub mount_height: f64,
    pub max_range: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Self {
            width: 64,
            height: 15,
            hfov: 105f64.to_radians(),
            mount_height: 0.3,
            max_range: 6.0,
        }
    }
}

impl Camera {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_hfov(self.width, self.height, self.hfov)
    }

    /// Row whose rays are (closest to) horizontal.
    pub fn horizon_row(&self) -> usize {
        (self.intrinsics().cy - 0.5).round().clamp(0.0, (self.height - 1) as f64) as usize
    }

    /// Ego-frame azimuth of column `u`, counter-clockwise from forward.
    pub fn column_azimuth(&self, u: usize) -> f64 {
        let k = self.intrinsics();
        (-(u as f64 + 0.5 - k.cx) / k.fx).atan()
    }

    /// Column whose azimuth is nearest `azimuth`, clamped to the image.
    pub fn column_for_azimuth(&self, azimuth: f64) -> usize {
        let k = self.intrinsics();
        let px = k.cx - k.fx * azimuth.clamp(-1.5, 1.5).tan();
        (px - 0.5).round().clamp(0.0, (self.width - 1) as f64) as usize
    }
}

/// Renders ranges by casting one horizontal ray per column against the walls
/// and resolving each row analytically against wall extent and floor.
pub fn render_depth(world: &WorldMap, pose: Pose2, camera: &Camera) -> DepthFrame {
    let k = camera.intrinsics();
    let h = camera.mount_height;
    let mut ranges = vec![INVALID_RANGE; camera.width * camera.height];
    for u in 0..camera.width {
        let lateral = -(u as f64 + 0.5 - k.cx) / k.fx;
        let dir_ego = Vec2::new(1.0, lateral);
        let dir_world = dir_ego.rotate(pose.theta).normalized().expect("nonzero ray");
        let horizontal = dir_ego.norm();
        // Horizontal distance to the first wall along this column's plane.
        let wall = world.raycast(pose.position(), dir_world, camera.max_range);
        for v in 0..camera.height {
            let vertical = -(v as f64 + 0.5 - k.cy) / k.fy;
            let norm = (horizontal * horizontal + vertical * vertical).sqrt();
            let (hz, vz) = (horizontal / norm, vertical / norm);
            let mut best = f64::INFINITY;
            if let Some(t) = wall {
                let r = t / hz;
                let z = h + vz * r;
                if (0.0..=world.wall_height()).contains(&z) {
                    best = r;
                }
            }
            if vz < 0.0 {
                best = best.min(h / -vz);
            }
            if best <= camera.max_range {
                ranges[v * camera.width + u] = best as f32;
            }
        }
    }
    DepthFrame {
        width: camera.width,
        height: camera.height,
        ranges,
        intrinsics: k,
        camera_height: h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Segment;
    use crate::percept::depth_to_cloud;

    #[test]
    fn fronto_parallel_wall_center_row() {
        let world = WorldMap::new("w", vec![Segment::new(Vec2::new(2.0, -10.0), Vec2::new(2.0, 10.0))], 2.5).unwrap();
        let cam = Camera::default();
        let frame = render_depth(&world, Pose2::new(0.0, 0.0, 0.0), &cam);
        let row = cam.horizon_row();
        for u in 0..cam.width {
            let expected = 2.0 / cam.column_azimuth(u).cos();
            let got = frame.range(u, row).unwrap();
            assert!((got - expected).abs() < 1e-5 * expected, "column {u}: {got} vs {expected}");
        }
    }

    #[test]
    fn empty_world_sees_floor_only_below_horizon() {
        let world = WorldMap::new("empty", vec![], 2.5).unwrap();
        let cam = Camera::default();
        let frame = render_depth(&world, Pose2::new(3.0, 1.0, 0.4), &cam);
        let row = cam.horizon_row();
        for v in 0..cam.height {
            for u in 0..cam.width {
                let r = frame.range(u, v);
                if v <= row {
                    assert!(r.is_none());
                }
                if let Some(r) = r {
                    let d = cam.intrinsics().ray(u, v);
                    assert!((cam.mount_height + d.z * r).abs() < 1e-5);
                }
            }
        }
        assert!(frame.range(0, cam.height - 1).is_some());
    }

    #[test]
    fn cloud_of_rendered_wall_sits_on_wall() {
        let world = WorldMap::new("w", vec![Segment::new(Vec2::new(1.5, -10.0), Vec2::new(1.5, 10.0))], 2.5).unwrap();
        let cam = Camera::default();
        let cloud = depth_to_cloud(&render_depth(&world, Pose2::new(0.0, 0.0, 0.0), &cam)).unwrap();
        for p in &cloud.points {
            assert!((p.x - 1.5).abs() < 1e-4 || p.z.abs() < 1e-4, "{p:?}");
        }
    }

    #[test]
    fn azimuth_column_round_trip() {
        let cam = Camera::default();
        for u in 0..cam.width {
            assert_eq!(cam.column_for_azimuth(cam.column_azimuth(u)), u);
        }
    }
}
