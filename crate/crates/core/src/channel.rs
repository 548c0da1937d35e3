//! Geometric multipath channels.
//!
//! Paths are found with the image method: the direct segment, one specular
//! bounce off each building facade and one bounce off the ground. A path
//! survives only if none of its segments cuts through a vehicle box or a
//! facade. The array is a ULA along the street (x) axis at the base station.

use crate::geometry::{GroundBox, Vec3};
use crate::scene::{Frame, SceneConfig};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ChannelError {
    #[error("invalid ray-tracing configuration: {0}")]
    Invalid(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("window [{t0}, {t0}+{horizon}] exceeds {frames} frames")]
    OutOfRange { t0: usize, horizon: usize, frames: usize },
    #[error("target user changes within window starting at slot {t0}")]
    TargetChanged { t0: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RayTraceConfig {
    pub carrier_hz: f64,
    pub subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub antennas: usize,
    /// Element spacing in meters; `None` means half a wavelength at the
    /// carrier.
    pub antenna_spacing_m: Option<f64>,
    pub max_paths: usize,
    pub reflection: Complex64,
    pub noise_power_w: f64,
    pub tx_power_w: f64,
    /// Overrides the height of the scene's base-station position.
    pub bs_antenna_height: Option<f64>,
}

impl Default for RayTraceConfig {
    fn default() -> Self {
        Self {
            carrier_hz: 28e9,
            subcarriers: 128,
            subcarrier_spacing_hz: 1e6,
            antennas: 64,
            antenna_spacing_m: None,
            max_paths: 20,
            reflection: Complex64::from_polar(0.6, PI),
            noise_power_w: 0.1,
            tx_power_w: 1.0,
            bs_antenna_height: None,
        }
    }
}

impl RayTraceConfig {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let bad = |m: &str| Err(ChannelError::Invalid(m.to_string()));
        if self.subcarriers == 0 || self.antennas == 0 || self.max_paths == 0 {
            return bad("subcarriers, antennas and max_paths must be >= 1");
        }
        if !(self.carrier_hz > 0.0) || self.subcarrier_spacing_hz < 0.0 {
            return bad("carrier must be > 0 and spacing >= 0");
        }
        if self.reflection.norm() > 1.0 + 1e-12 {
            return bad("|reflection coefficient| must be <= 1");
        }
        if !(self.noise_power_w > 0.0) || !(self.tx_power_w > 0.0) {
            return bad("noise and transmit power must be > 0");
        }
        if matches!(self.antenna_spacing_m, Some(d) if !(d > 0.0)) {
            return bad("antenna spacing must be > 0");
        }
        Ok(())
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn spacing(&self) -> f64 {
        self.antenna_spacing_m.unwrap_or(self.wavelength() / 2.0)
    }

    /// Frequency of subcarrier `k`: centered on the carrier at `k = K/2`
    /// (integer division).
    pub fn subcarrier_hz(&self, k: usize) -> f64 {
        let offset = k as f64 - (self.subcarriers / 2) as f64;
        self.carrier_hz + offset * self.subcarrier_spacing_hz
    }

    pub fn snr(&self) -> f64 {
        self.tx_power_w / self.noise_power_w
    }

    pub fn bs_position(&self, scene: &SceneConfig) -> Vec3 {
        let mut p = scene.bs();
        if let Some(h) = self.bs_antenna_height {
            p.z = h;
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathComponent {
    pub alpha: f64,
    pub phase: f64,
    pub delay: f64,
    pub azimuth: f64,
    pub elevation: f64,
    pub is_los: bool,
}

/// `K x N_t` frequency-domain channel, row `k` for subcarrier `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub subcarriers: usize,
    pub antennas: usize,
    pub entries: Vec<Complex64>,
}

impl ChannelMatrix {
    pub fn zeros(subcarriers: usize, antennas: usize) -> Self {
        Self { subcarriers, antennas, entries: vec![Complex64::new(0.0, 0.0); subcarriers * antennas] }
    }

    pub fn row(&self, k: usize) -> &[Complex64] {
        &self.entries[k * self.antennas..(k + 1) * self.antennas]
    }

    /// Copy with every entry rounded through 32-bit floats, matching what
    /// the dataset container stores.
    pub fn to_f32_precision(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|z| Complex64::new(z.re as f32 as f64, z.im as f32 as f64))
            .collect();
        Self { entries, ..*self }
    }

    pub fn frobenius(&self) -> f64 {
        self.entries.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Array response at frequency `f`:
/// entry `n` is `exp(j * 2 pi d f / c * n * sin(el) * cos(az))`.
pub fn steering_vector(azimuth: f64, elevation: f64, f: f64, config: &RayTraceConfig) -> Vec<Complex64> {
    let varpi = 2.0 * PI * config.spacing() * f / SPEED_OF_LIGHT;
    let u = elevation.sin() * azimuth.cos();
    (0..config.antennas).map(|n| Complex64::from_polar(1.0, varpi * n as f64 * u)).collect()
}

/// Angles of a departure direction at the array. Azimuth is measured in the
/// ground plane from the array (+x) axis, in `(-pi, pi]`. Elevation is the
/// off-vertical angle folded into `[0, pi/2]`, so `sin(el) * cos(az)` is the
/// direction cosine along the array axis.
pub fn direction_angles(dir: Vec3) -> (f64, f64) {
    let mut az = dir.y.atan2(dir.x);
    if az <= -PI {
        az = PI;
    }
    let horizontal = (dir.x * dir.x + dir.y * dir.y).sqrt();
    let el = horizontal.atan2(dir.z.abs());
    (az, el)
}

struct Obstacles {
    boxes: Vec<GroundBox>,
    setback: f64,
    building_height: f64,
}

impl Obstacles {
    fn new(frame: &Frame, scene: &SceneConfig) -> Self {
        Self {
            boxes: frame.vehicles.iter().map(|v| v.bbox()).collect(),
            setback: scene.building_setback_m,
            building_height: scene.building_height_m,
        }
    }

    fn crosses_facade(&self, a: Vec3, b: Vec3) -> bool {
        const EPS: f64 = 1e-9;
        for side in [-self.setback, self.setback] {
            let da = a.y - side;
            let db = b.y - side;
            if (da > EPS && db < -EPS) || (da < -EPS && db > EPS) {
                let t = da / (da - db);
                let z = a.z + (b.z - a.z) * t;
                if z <= self.building_height {
                    return true;
                }
            }
        }
        false
    }

    fn clear(&self, a: Vec3, b: Vec3) -> bool {
        !self.crosses_facade(a, b) && !self.boxes.iter().any(|bx| bx.blocks_segment(a, b))
    }
}

fn make_path(points: &[Vec3], bounces: i32, config: &RayTraceConfig, is_los: bool) -> PathComponent {
    let length: f64 = points.windows(2).map(|s| (s[1] - s[0]).norm()).sum();
    let delay = length / SPEED_OF_LIGHT;
    let gamma = config.reflection;
    let alpha = config.wavelength() / (4.0 * PI * length) * gamma.norm().powi(bounces);
    let phase = (-2.0 * PI * config.carrier_hz * delay + f64::from(bounces) * gamma.arg()).rem_euclid(2.0 * PI);
    let (azimuth, elevation) = direction_angles(points[1] - points[0]);
    PathComponent { alpha, phase, delay, azimuth, elevation, is_los }
}

/// Traces the direct path, one bounce per facade and one ground bounce from
/// the base station to the target user's antenna. Blocked paths are dropped;
/// the rest are sorted by amplitude (descending) and truncated to
/// `max_paths`. An empty result is a valid outage.
pub fn trace_paths(frame: &Frame, scene: &SceneConfig, config: &RayTraceConfig) -> Vec<PathComponent> {
    let bs = config.bs_position(scene);
    let user = frame.user_antenna();
    let obstacles = Obstacles::new(frame, scene);
    let reflective = config.reflection.norm() > 0.0;
    let mut paths = Vec::with_capacity(4);

    if obstacles.clear(bs, user) {
        paths.push(make_path(&[bs, user], 0, config, true));
    }

    if reflective && scene.building_height_m > 0.0 {
        for side in [-scene.building_setback_m, scene.building_setback_m] {
            let image = Vec3::new(bs.x, 2.0 * side - bs.y, bs.z);
            let denom = user.y - image.y;
            if denom.abs() < 1e-12 {
                continue;
            }
            let t = (side - image.y) / denom;
            if !(0.0..=1.0).contains(&t) {
                continue;
            }
            let hit = image + (user - image) * t;
            if !(0.0..=scene.building_height_m).contains(&hit.z) {
                continue;
            }
            if obstacles.clear(bs, hit) && obstacles.clear(hit, user) {
                paths.push(make_path(&[bs, hit, user], 1, config, false));
            }
        }
    }

    if reflective && bs.z > 0.0 && user.z > 0.0 {
        let t = bs.z / (bs.z + user.z);
        let image = Vec3::new(bs.x, bs.y, -bs.z);
        let mut hit = image + (user - image) * t;
        hit.z = 0.0;
        if obstacles.clear(bs, hit) && obstacles.clear(hit, user) {
            paths.push(make_path(&[bs, hit, user], 1, config, false));
        }
    }

    // stable: equal amplitudes keep candidate order
    paths.sort_by(|a, b| b.alpha.total_cmp(&a.alpha));
    paths.truncate(config.max_paths);
    paths
}

/// Sums every path's contribution on each subcarrier.
pub fn assemble_channel(paths: &[PathComponent], config: &RayTraceConfig) -> ChannelMatrix {
    let mut h = ChannelMatrix::zeros(config.subcarriers, config.antennas);
    for k in 0..config.subcarriers {
        let f = config.subcarrier_hz(k);
        let row = &mut h.entries[k * config.antennas..(k + 1) * config.antennas];
        for p in paths {
            let gain = Complex64::from_polar(p.alpha, -2.0 * PI * f * p.delay + p.phase);
            let a = steering_vector(p.azimuth, p.elevation, f, config);
            for (e, an) in row.iter_mut().zip(&a) {
                *e += gain * an;
            }
        }
    }
    h
}

/// `h^T w s + noise` (no conjugation).
pub fn received_signal(
    h: &[Complex64],
    w: &[Complex64],
    s: Complex64,
    noise: Complex64,
) -> Result<Complex64, ChannelError> {
    if h.len() != w.len() {
        return Err(ChannelError::Dimension { expected: h.len(), got: w.len() });
    }
    let hw: Complex64 = h.iter().zip(w).map(|(a, b)| a * b).sum();
    Ok(hw * s + noise)
}

/// Whether the target user has lost its direct path `horizon` slots after
/// `t0`. The target must stay the same over the whole window.
pub fn blockage_label(
    frames: &[Frame],
    t0: usize,
    horizon: usize,
    scene: &SceneConfig,
    config: &RayTraceConfig,
) -> Result<bool, ChannelError> {
    let end = t0 + horizon;
    if end >= frames.len() {
        return Err(ChannelError::OutOfRange { t0, horizon, frames: frames.len() });
    }
    let target = frames[t0].target_user_id;
    if frames[t0..=end].iter().any(|f| f.target_user_id != target) {
        return Err(ChannelError::TargetChanged { t0 });
    }
    Ok(!trace_paths(&frames[end], scene, config).iter().any(|p| p.is_los))
}
