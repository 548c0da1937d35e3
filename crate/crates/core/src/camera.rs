//! Pinhole camera model shared by the frustum test and the label renderer.

use crate::geometry::Vec3;
use serde::{Deserialize, Serialize};

/// Camera placement. Angles in radians; `yaw` is measured from the +x street
/// axis, `pitch` is positive upward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
    pub hfov: f64,
    pub vfov: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct Pinhole {
    pub origin: Vec3,
    pub forward: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    tan_h: f64,
    tan_v: f64,
}

impl Pinhole {
    pub fn new(pose: &CameraPose) -> Self {
        let (sy, cy) = pose.yaw.sin_cos();
        let (sp, cp) = pose.pitch.sin_cos();
        let forward = Vec3::new(cy * cp, sy * cp, sp);
        let right = Vec3::new(sy, -cy, 0.0);
        let up = right.cross(forward);
        Self {
            origin: Vec3::from_array(pose.position),
            forward,
            right,
            up,
            tan_h: (pose.hfov / 2.0).tan(),
            tan_v: (pose.vfov / 2.0).tan(),
        }
    }

    /// Normalized image coordinates in `[-1, 1]^2` (x right, y up), or `None`
    /// for points at or behind the image plane.
    pub fn project_normalized(&self, p: Vec3) -> Option<(f64, f64)> {
        let d = p - self.origin;
        let zc = d.dot(self.forward);
        if zc <= 1e-9 {
            return None;
        }
        Some((d.dot(self.right) / zc / self.tan_h, d.dot(self.up) / zc / self.tan_v))
    }

    /// Continuous pixel coordinates `(row, col)` for an `h x w` image.
    pub fn project_pixel(&self, p: Vec3, h: usize, w: usize) -> Option<(f64, f64)> {
        let (nx, ny) = self.project_normalized(p)?;
        let col = (nx + 1.0) * w as f64 / 2.0;
        let row = (1.0 - ny) * h as f64 / 2.0;
        Some((row, col))
    }

    pub fn in_frustum(&self, p: Vec3) -> bool {
        matches!(self.project_normalized(p), Some((x, y)) if x.abs() <= 1.0 && y.abs() <= 1.0)
    }

    /// Direction (not normalized) of the ray through the center of pixel
    /// `(row, col)`.
    pub fn pixel_ray(&self, row: usize, col: usize, h: usize, w: usize) -> Vec3 {
        let nx = (col as f64 + 0.5) / w as f64 * 2.0 - 1.0;
        let ny = 1.0 - (row as f64 + 0.5) / h as f64 * 2.0;
        self.forward + self.right * (nx * self.tan_h) + self.up * (ny * self.tan_v)
    }

    /// Normalized vertical coordinate of the horizon; rays through rows with
    /// `ny` above this value point upward.
    pub fn horizon_ny(&self) -> f64 {
        // dir.z = forward.z + ny * tan_v * up.z, and right.z = 0
        -self.forward.z / (self.up.z * self.tan_v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_pixel_projects_to_center() {
        let pose = CameraPose { position: [0.0, 0.0, 5.0], yaw: 0.3, pitch: -0.2, hfov: 1.5, vfov: 0.9 };
        let cam = Pinhole::new(&pose);
        let p = cam.origin + cam.forward * 10.0;
        let (r, c) = cam.project_pixel(p, 40, 80).unwrap();
        assert!((r - 20.0).abs() < 1e-9 && (c - 40.0).abs() < 1e-9);
        assert!(cam.project_pixel(cam.origin - cam.forward, 40, 80).is_none());
    }

    #[test]
    fn pixel_ray_round_trips() {
        let pose = CameraPose { position: [1.0, 2.0, 5.0], yaw: -1.2, pitch: -0.3, hfov: 1.7, vfov: 1.1 };
        let cam = Pinhole::new(&pose);
        let dir = cam.pixel_ray(3, 17, 32, 64);
        let (r, c) = cam.project_pixel(cam.origin + dir * 7.0, 32, 64).unwrap();
        assert!((r - 3.5).abs() < 1e-9 && (c - 17.5).abs() < 1e-9);
    }
}
