//! Synthetic street-canyon traffic.
//!
//! The street runs along +x from `0` to `street_length_m`, centered on `y = 0`.
//! Lanes with a negative center line drive toward +x, the others toward -x.
//! Sidewalks flank the road and continuous building facades stand at
//! `|y| = building_setback_m`.

use crate::camera::{CameraPose, Pinhole};
use crate::geometry::{footprints_overlap, GroundBox, Vec3};
use crate::rng::{self, Stream};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SceneError {
    #[error("invalid scene configuration: {0}")]
    Invalid(String),
    #[error("no candidate target user at slot {slot}")]
    NoCandidateTarget { slot: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Car,
    Van,
    Bus,
}

/// Length, width and height in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dims {
    pub length: f64,
    pub width: f64,
    pub height: f64,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 3] = [VehicleClass::Car, VehicleClass::Van, VehicleClass::Bus];

    pub fn dims(self) -> Dims {
        match self {
            VehicleClass::Car => Dims { length: 3.71, width: 1.79, height: 1.55 },
            VehicleClass::Van => Dims { length: 5.20, width: 2.61, height: 2.47 },
            VehicleClass::Bus => Dims { length: 11.08, width: 3.25, height: 3.33 },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            VehicleClass::Car => "car",
            VehicleClass::Van => "van",
            VehicleClass::Bus => "bus",
        }
    }
}

/// A vehicle placed at scenario start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub class: VehicleClass,
    pub lane: usize,
    pub x: f64,
    pub speed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub street_length_m: f64,
    pub lane_count: usize,
    pub lane_width_m: f64,
    pub sidewalk_width_m: f64,
    pub building_setback_m: f64,
    pub building_height_m: f64,
    pub bs_position: [f64; 3],
    pub camera_poses: Vec<CameraPose>,
    pub slot_duration_s: f64,
    pub frame_count: usize,
    pub spawn_rate: f64,
    pub speed_range_mps: (f64, f64),
    pub seed: u64,
    /// Slots simulated before the first recorded frame.
    pub warmup_slots: usize,
    pub initial_vehicles: Vec<VehicleSpec>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let street_length_m = 120.0;
        let mid = street_length_m / 2.0;
        Self {
            street_length_m,
            lane_count: 4,
            lane_width_m: 3.5,
            sidewalk_width_m: 3.0,
            building_setback_m: 12.0,
            building_height_m: 20.0,
            bs_position: [mid, 11.0, 4.0],
            camera_poses: default_cameras(mid, 10.5, 5.0),
            slot_duration_s: 0.05,
            frame_count: 2000,
            spawn_rate: 0.15,
            speed_range_mps: (6.0, 14.0),
            seed: 0,
            warmup_slots: 200,
            initial_vehicles: Vec::new(),
        }
    }
}

/// Two cameras at height `z` on opposite sides of the street, both facing it.
pub fn default_cameras(x: f64, side_offset: f64, z: f64) -> Vec<CameraPose> {
    let hfov = 110f64.to_radians();
    let vfov = 2.0 * ((hfov / 2.0).tan() / 2.0).atan();
    let pitch = -20f64.to_radians();
    vec![
        CameraPose { position: [x, -side_offset, z], yaw: PI / 2.0, pitch, hfov, vfov },
        CameraPose { position: [x, side_offset, z], yaw: -PI / 2.0, pitch, hfov, vfov },
    ]
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |m: &str| Err(SceneError::Invalid(m.to_string()));
        let (vmin, vmax) = self.speed_range_mps;
        if !(self.slot_duration_s > 0.0) {
            return bad("slot_duration_s must be > 0");
        }
        if self.frame_count == 0 {
            return bad("frame_count must be >= 1");
        }
        if !(vmin > 0.0) || vmin > vmax {
            return bad("speed_range_mps must satisfy 0 < min <= max");
        }
        if self.camera_poses.is_empty() {
            return bad("at least one camera is required");
        }
        if self.lane_count == 0 || !(self.lane_width_m > 0.0) || !(self.street_length_m > 0.0) {
            return bad("street needs a positive length and at least one lane of positive width");
        }
        if !(self.spawn_rate >= 0.0) || !self.spawn_rate.is_finite() {
            return bad("spawn_rate must be finite and >= 0");
        }
        if self.sidewalk_width_m < 0.0 || self.building_height_m < 0.0 {
            return bad("sidewalk width and building height must be >= 0");
        }
        if self.building_setback_m < self.road_half_width() + self.sidewalk_width_m {
            return bad("building facades must stand behind the sidewalks");
        }
        let bs = self.bs_position;
        if bs[1].abs() >= self.building_setback_m || bs[2] <= 0.0 {
            return bad("base station must sit inside the canyon above ground");
        }
        for cam in &self.camera_poses {
            if !(cam.hfov > 0.0 && cam.hfov < PI && cam.vfov > 0.0 && cam.vfov < PI) {
                return bad("camera fields of view must lie in (0, pi)");
            }
        }
        let widest = VehicleClass::ALL.iter().map(|c| c.dims().width).fold(0.0, f64::max);
        if self.lane_width_m < widest {
            return bad("lanes must be at least as wide as the widest vehicle");
        }
        for v in &self.initial_vehicles {
            if v.lane >= self.lane_count {
                return bad("pre-placed vehicle lane out of range");
            }
            if v.speed < vmin || v.speed > vmax {
                return bad("pre-placed vehicle speed outside speed_range_mps");
            }
            if v.x < 0.0 || v.x > self.street_length_m {
                return bad("pre-placed vehicle outside the street");
            }
        }
        Ok(())
    }

    pub fn road_half_width(&self) -> f64 {
        self.lane_count as f64 * self.lane_width_m / 2.0
    }

    pub fn lane_center_y(&self, lane: usize) -> f64 {
        -self.road_half_width() + (lane as f64 + 0.5) * self.lane_width_m
    }

    /// Heading of a lane: +x for lanes left of the center line (y < 0 side
    /// or exactly on it), -x otherwise.
    pub fn lane_heading(&self, lane: usize) -> f64 {
        if self.lane_center_y(lane) <= 0.0 {
            0.0
        } else {
            PI
        }
    }

    pub fn bs(&self) -> Vec3 {
        Vec3::from_array(self.bs_position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vehicle {
    pub id: u32,
    pub class: VehicleClass,
    pub center: [f64; 2],
    pub heading: f64,
    pub speed: f64,
    pub lane: usize,
}

impl Vehicle {
    pub fn bbox(&self) -> GroundBox {
        let d = self.class.dims();
        GroundBox { center: self.center, heading: self.heading, length: d.length, width: d.width, height: d.height }
    }

    pub fn height(&self) -> f64 {
        self.class.dims().height
    }

    /// Position along the direction of travel.
    fn progress(&self) -> f64 {
        self.center[0] * self.heading.cos()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t_index: u64,
    pub vehicles: Vec<Vehicle>,
    pub target_user_id: u32,
    pub user_antenna_pos: [f64; 3],
}

impl Frame {
    pub fn vehicle(&self, id: u32) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.id == id)
    }

    pub fn target(&self) -> &Vehicle {
        self.vehicle(self.target_user_id).expect("frame target refers to an existing vehicle")
    }

    pub fn user_antenna(&self) -> Vec3 {
        Vec3::from_array(self.user_antenna_pos)
    }
}

/// Independent child streams of the scenario seed plus the id counter.
#[derive(Debug, Clone)]
pub struct TrafficStreams {
    pub spawn: Stream,
    pub lane: Stream,
    pub class: Stream,
    pub speed: Stream,
    pub target: Stream,
    next_id: u32,
}

impl TrafficStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            spawn: rng::stream(seed, "scene/spawn"),
            lane: rng::stream(seed, "scene/lane"),
            class: rng::stream(seed, "scene/class"),
            speed: rng::stream(seed, "scene/speed"),
            target: rng::stream(seed, "scene/target"),
            next_id: 0,
        }
    }

    fn fresh_id(&mut self) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }
}

/// Number of spawn attempts for one slot, drawn from the spawn stream.
pub fn draw_spawn_count(rate: f64, spawn: &mut Stream) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    let poisson = Poisson::new(rate).expect("positive finite rate");
    poisson.sample(spawn) as u64
}

fn in_bounds(v: &Vehicle, config: &SceneConfig) -> bool {
    (0.0..=config.street_length_m).contains(&v.center[0])
}

/// Gap between the rear of `leader` and the front of `follower` in one lane.
fn bumper_gap(leader: &Vehicle, follower: &Vehicle) -> f64 {
    (leader.progress() - follower.progress()).abs()
        - (leader.class.dims().length + follower.class.dims().length) / 2.0
}

/// Largest speed a new follower may keep without reaching its leader before
/// the leader leaves the street.
fn follow_speed(leader: &Vehicle, follower: &Vehicle, desired: f64, config: &SceneConfig) -> f64 {
    const MARGIN: f64 = 0.5;
    if desired <= leader.speed {
        return desired;
    }
    let remaining = if leader.heading.cos() > 0.0 {
        config.street_length_m - leader.center[0]
    } else {
        leader.center[0]
    };
    let time_left = remaining.max(0.0) / leader.speed + config.slot_duration_s;
    let slack = bumper_gap(leader, follower) - MARGIN;
    if slack <= 0.0 {
        leader.speed
    } else {
        desired.min(leader.speed + slack / time_left)
    }
}

fn place(config: &SceneConfig, id: u32, class: VehicleClass, lane: usize, x: f64, speed: f64) -> Vehicle {
    Vehicle { id, class, center: [x, config.lane_center_y(lane)], heading: config.lane_heading(lane), speed, lane }
}

fn try_insert(vehicles: &mut Vec<Vehicle>, mut candidate: Vehicle, desired: f64, config: &SceneConfig) -> bool {
    let fp = candidate.bbox().footprint();
    if vehicles.iter().any(|v| footprints_overlap(&fp, &v.bbox().footprint())) {
        return false;
    }
    let leader = vehicles
        .iter()
        .filter(|v| v.lane == candidate.lane && v.progress() > candidate.progress())
        .min_by(|a, b| a.progress().total_cmp(&b.progress()));
    candidate.speed = match leader {
        Some(l) => follow_speed(l, &candidate, desired, config),
        None => desired,
    };
    vehicles.push(candidate);
    true
}

fn candidate_targets(vehicles: &[Vehicle], cameras: &[Pinhole]) -> Vec<u32> {
    let seen: Vec<u32> = vehicles
        .iter()
        .filter(|v| {
            let p = Vec3::new(v.center[0], v.center[1], v.height() / 2.0);
            cameras.iter().all(|c| c.in_frustum(p))
        })
        .map(|v| v.id)
        .collect();
    if seen.is_empty() {
        vehicles.iter().map(|v| v.id).collect()
    } else {
        seen
    }
}

fn choose_target(
    vehicles: &[Vehicle],
    previous: Option<u32>,
    cameras: &[Pinhole],
    target: &mut Stream,
    slot: u64,
) -> Result<u32, SceneError> {
    if let Some(id) = previous {
        if vehicles.iter().any(|v| v.id == id) {
            return Ok(id);
        }
    }
    let candidates = candidate_targets(vehicles, cameras);
    if candidates.is_empty() {
        return Err(SceneError::NoCandidateTarget { slot });
    }
    Ok(candidates[target.random_range(0..candidates.len())])
}

fn finish_frame(t_index: u64, vehicles: Vec<Vehicle>, target_user_id: u32) -> Frame {
    let t = vehicles.iter().find(|v| v.id == target_user_id).expect("target present");
    let user_antenna_pos = [t.center[0], t.center[1], t.height()];
    Frame { t_index, vehicles, target_user_id, user_antenna_pos }
}

/// Moves, despawns and spawns vehicles for one slot.
fn step_traffic(vehicles: &[Vehicle], config: &SceneConfig, streams: &mut TrafficStreams) -> Vec<Vehicle> {
    let dt = config.slot_duration_s;
    let mut next: Vec<Vehicle> = vehicles
        .iter()
        .map(|v| {
            let mut m = v.clone();
            // lane-aligned motion; heading is 0 or pi
            m.center[0] += v.speed * dt * v.heading.cos();
            m
        })
        .filter(|v| in_bounds(v, config))
        .collect();

    let (vmin, vmax) = config.speed_range_mps;
    let attempts = draw_spawn_count(config.spawn_rate, &mut streams.spawn);
    for _ in 0..attempts {
        let lane = streams.lane.random_range(0..config.lane_count);
        let class = VehicleClass::ALL[streams.class.random_range(0..VehicleClass::ALL.len())];
        let desired = if vmax > vmin { streams.speed.random_range(vmin..=vmax) } else { vmin };
        let x = if config.lane_heading(lane) == 0.0 { 0.0 } else { config.street_length_m };
        let id = streams.next_id;
        if try_insert(&mut next, place(config, id, class, lane, x, desired), desired, config) {
            streams.fresh_id();
        }
    }
    next
}

/// Advances `frame` by one slot. The target is kept while it stays in the
/// street; when it leaves, a new one is drawn.
pub fn advance_frame(frame: &Frame, config: &SceneConfig, streams: &mut TrafficStreams) -> Result<Frame, SceneError> {
    let cameras: Vec<Pinhole> = config.camera_poses.iter().map(Pinhole::new).collect();
    let vehicles = step_traffic(&frame.vehicles, config, streams);
    let slot = frame.t_index + 1;
    let target = choose_target(&vehicles, Some(frame.target_user_id), &cameras, &mut streams.target, slot)?;
    Ok(finish_frame(slot, vehicles, target))
}

/// Vehicles of one slot with no target attached, for callers that only need
/// the traffic process.
pub fn advance_vehicles(vehicles: &[Vehicle], config: &SceneConfig, streams: &mut TrafficStreams) -> Vec<Vehicle> {
    step_traffic(vehicles, config, streams)
}

/// Runs the traffic process and records `frame_count` frames.
pub fn generate_scenario(config: &SceneConfig) -> Result<Vec<Frame>, SceneError> {
    config.validate()?;
    const MAX_EXTRA_WARMUP: usize = 100_000;
    let cameras: Vec<Pinhole> = config.camera_poses.iter().map(Pinhole::new).collect();
    let mut streams = TrafficStreams::new(config.seed);

    let mut vehicles = Vec::new();
    for spec in &config.initial_vehicles {
        let id = streams.fresh_id();
        let v = place(config, id, spec.class, spec.lane, spec.x, spec.speed);
        let fp = v.bbox().footprint();
        if vehicles.iter().any(|o: &Vehicle| footprints_overlap(&fp, &o.bbox().footprint())) {
            return Err(SceneError::Invalid("pre-placed vehicles overlap".into()));
        }
        vehicles.push(v);
    }

    let mut warm = 0;
    while warm < config.warmup_slots || vehicles.is_empty() {
        if warm >= config.warmup_slots + MAX_EXTRA_WARMUP {
            return Err(SceneError::NoCandidateTarget { slot: 0 });
        }
        if config.spawn_rate == 0.0 && vehicles.is_empty() {
            return Err(SceneError::NoCandidateTarget { slot: 0 });
        }
        vehicles = step_traffic(&vehicles, config, &mut streams);
        warm += 1;
    }

    let first_target = choose_target(&vehicles, None, &cameras, &mut streams.target, 0)?;
    let mut frames = Vec::with_capacity(config.frame_count);
    frames.push(finish_frame(0, vehicles, first_target));
    for _ in 1..config.frame_count {
        let next = advance_frame(frames.last().expect("non-empty"), config, &mut streams)?;
        frames.push(next);
    }
    Ok(frames)
}
