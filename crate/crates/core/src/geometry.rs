//! Small 3-D vector and box helpers shared by the renderer and the ray tracer.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Self) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Self {
        self * (1.0 / self.norm())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Box standing on the ground plane, rotated by `heading` about the vertical
/// axis. Spans `[-length/2, length/2] x [-width/2, width/2] x [0, height]` in
/// its own frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundBox {
    pub center: [f64; 2],
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl GroundBox {
    fn to_local(&self, p: Vec3) -> Vec3 {
        let (s, c) = self.heading.sin_cos();
        let dx = p.x - self.center[0];
        let dy = p.y - self.center[1];
        Vec3::new(c * dx + s * dy, -s * dx + c * dy, p.z)
    }

    fn dir_to_local(&self, d: Vec3) -> Vec3 {
        let (s, c) = self.heading.sin_cos();
        Vec3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    /// Parametric interval `[t0, t1]` of `origin + t * dir` inside the box,
    /// or `None` when the line misses it.
    pub fn clip_line(&self, origin: Vec3, dir: Vec3) -> Option<(f64, f64)> {
        let o = self.to_local(origin);
        let d = self.dir_to_local(dir);
        let lo = [-self.length / 2.0, -self.width / 2.0, 0.0];
        let hi = [self.length / 2.0, self.width / 2.0, self.height];
        let oa = [o.x, o.y, o.z];
        let da = [d.x, d.y, d.z];
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for axis in 0..3 {
            if da[axis].abs() < 1e-15 {
                if oa[axis] < lo[axis] || oa[axis] > hi[axis] {
                    return None;
                }
            } else {
                let inv = 1.0 / da[axis];
                let mut a = (lo[axis] - oa[axis]) * inv;
                let mut b = (hi[axis] - oa[axis]) * inv;
                if a > b {
                    std::mem::swap(&mut a, &mut b);
                }
                t0 = t0.max(a);
                t1 = t1.min(b);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some((t0, t1))
    }

    /// True when the open segment `a -> b` passes through the box interior
    /// over a non-degenerate stretch.
    pub fn blocks_segment(&self, a: Vec3, b: Vec3) -> bool {
        const EPS: f64 = 1e-9;
        match self.clip_line(a, b - a) {
            Some((t0, t1)) => {
                let lo = t0.max(0.0);
                let hi = t1.min(1.0);
                hi - lo > EPS
            }
            None => false,
        }
    }

    /// Nearest positive hit distance of a ray.
    pub fn ray_hit(&self, origin: Vec3, dir: Vec3) -> Option<f64> {
        let (t0, t1) = self.clip_line(origin, dir)?;
        if t1 <= 0.0 {
            None
        } else if t0 > 0.0 {
            Some(t0)
        } else {
            // origin inside the box
            Some(0.0)
        }
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (s, c) = self.heading.sin_cos();
        let mut out = [Vec3::default(); 8];
        let mut i = 0;
        for &lx in &[-0.5, 0.5] {
            for &ly in &[-0.5, 0.5] {
                for &z in &[0.0, self.height] {
                    let px = lx * self.length;
                    let py = ly * self.width;
                    out[i] = Vec3::new(
                        self.center[0] + c * px - s * py,
                        self.center[1] + s * px + c * py,
                        z,
                    );
                    i += 1;
                }
            }
        }
        out
    }

    /// Footprint corners in the ground plane, counter-clockwise.
    pub fn footprint(&self) -> [[f64; 2]; 4] {
        let (s, c) = self.heading.sin_cos();
        let pts = [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)];
        pts.map(|(lx, ly)| {
            let px = lx * self.length;
            let py = ly * self.width;
            [self.center[0] + c * px - s * py, self.center[1] + s * px + c * py]
        })
    }
}

/// Separating-axis overlap test for two convex quadrilaterals. Touching
/// edges do not count as overlap.
pub fn footprints_overlap(a: &[[f64; 2]; 4], b: &[[f64; 2]; 4]) -> bool {
    for poly in [a, b] {
        for i in 0..4 {
            let p = poly[i];
            let q = poly[(i + 1) % 4];
            let axis = [-(q[1] - p[1]), q[0] - p[0]];
            let project = |pts: &[[f64; 2]; 4]| {
                pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    let d = v[0] * axis[0] + v[1] * axis[1];
                    (lo.min(d), hi.max(d))
                })
            };
            let (amin, amax) = project(a);
            let (bmin, bmax) = project(b);
            if amax <= bmin + 1e-12 || bmax <= amin + 1e-12 {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> GroundBox {
        GroundBox { center: [0.0, 0.0], heading: 0.0, length: 2.0, width: 2.0, height: 2.0 }
    }

    #[test]
    fn segment_through_box_is_blocked() {
        let b = unit_box();
        assert!(b.blocks_segment(Vec3::new(-5.0, 0.0, 1.0), Vec3::new(5.0, 0.0, 1.0)));
        assert!(!b.blocks_segment(Vec3::new(-5.0, 0.0, 3.0), Vec3::new(5.0, 0.0, 3.0)));
        // stops short of the box
        assert!(!b.blocks_segment(Vec3::new(-5.0, 0.0, 1.0), Vec3::new(-2.0, 0.0, 1.0)));
    }

    #[test]
    fn rotated_box_footprint() {
        let b = GroundBox { heading: std::f64::consts::FRAC_PI_2, ..unit_box() };
        let fp = b.footprint();
        for c in fp {
            assert!((c[0].abs() - 1.0).abs() < 1e-12 && (c[1].abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_test() {
        let a = unit_box().footprint();
        let b = GroundBox { center: [1.5, 0.0], ..unit_box() }.footprint();
        let c = GroundBox { center: [2.0, 0.0], ..unit_box() }.footprint();
        assert!(footprints_overlap(&a, &b));
        assert!(!footprints_overlap(&a, &c));
    }

    #[test]
    fn ray_hit_distance() {
        let b = unit_box();
        let t = b.ray_hit(Vec3::new(-5.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0)).unwrap();
        assert!((t - 4.0).abs() < 1e-12);
        assert!(b.ray_hit(Vec3::new(-5.0, 0.0, 1.0), Vec3::new(-1.0, 0.0, 0.0)).is_none());
    }
}
