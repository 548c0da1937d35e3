//! Ground-truth semantic label maps and per-concept zero-masks.

use crate::camera::{CameraPose, Pinhole};
use crate::rng::Stream;
use crate::scene::{Frame, SceneConfig};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SemanticsError {
    #[error("render resolution {0}x{1} is below the 16x16 minimum")]
    ResolutionTooSmall(usize, usize),
    #[error("camera has a degenerate field of view")]
    DegenerateCamera,
    #[error("concept index {0} out of range")]
    ConceptOutOfRange(usize),
    #[error("map shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("corruption probability {0} outside [0, 1]")]
    BadProbability(f64),
}

/// Number of semantic concepts in the catalog.
pub const M_CON: usize = 20;

/// Concept names in index order. Indices are stable across the crate and
/// every file it writes.
pub const CONCEPT_NAMES: [&str; M_CON] = [
    "building",
    "fence",
    "pedestrian",
    "pole",
    "roadline",
    "sidewalk",
    "vegetation",
    "vehicle",
    "wall",
    "trafficsign",
    "sky",
    "ground",
    "bridge",
    "railtrack",
    "trafficlight",
    "static",
    "dynamic",
    "water",
    "terrain",
    "unlabeled",
];

pub mod concept {
    pub const BUILDING: u8 = 0;
    pub const ROADLINE: u8 = 4;
    pub const SIDEWALK: u8 = 5;
    pub const VEHICLE: u8 = 7;
    pub const SKY: u8 = 10;
    pub const GROUND: u8 = 11;
    pub const BRIDGE: u8 = 12;
    pub const WATER: u8 = 17;
    /// The catalog has no road entry; the drivable surface is `ground`.
    pub const ROAD: u8 = GROUND;
}

pub fn concept_index(name: &str) -> Option<usize> {
    CONCEPT_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticMap {
    pub camera_id: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major concept indices.
    pub labels: Vec<u8>,
}

impl SemanticMap {
    pub fn filled(camera_id: usize, height: usize, width: usize, label: u8) -> Self {
        Self { camera_id, height, width, labels: vec![label; height * width] }
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn histogram(&self) -> [usize; M_CON] {
        let mut h = [0usize; M_CON];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConceptMask {
    pub concept: usize,
    pub height: usize,
    pub width: usize,
    pub mask: Vec<u8>,
}

impl ConceptMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }
}

/// Painter order of the rendered primitives, used to break exact depth ties
/// (later wins).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Primitive {
    Building,
    Surface,
    Vehicle,
}

const STRIPE_HALF_WIDTH: f64 = 0.075;
const DASH_PERIOD: f64 = 6.0;
const DASH_ON: f64 = 3.0;

/// Label of the ground plane at `(x, y)`.
fn surface_label(x: f64, y: f64, scene: &SceneConfig) -> u8 {
    let half = scene.road_half_width();
    let ay = y.abs();
    if ay <= half {
        for i in 1..scene.lane_count {
            let divider = -half + i as f64 * scene.lane_width_m;
            if (y - divider).abs() <= STRIPE_HALF_WIDTH && x.rem_euclid(DASH_PERIOD) < DASH_ON {
                return concept::ROADLINE;
            }
        }
        concept::ROAD
    } else if ay <= half + scene.sidewalk_width_m {
        concept::SIDEWALK
    } else {
        concept::GROUND
    }
}

fn validate_pose(pose: &CameraPose) -> Result<(), SemanticsError> {
    let ok = |a: f64| a.is_finite() && a > 1e-9 && a < std::f64::consts::PI;
    if ok(pose.hfov) && ok(pose.vfov) {
        Ok(())
    } else {
        Err(SemanticsError::DegenerateCamera)
    }
}

/// Casts one ray per pixel center and labels the nearest surface hit:
/// vehicle boxes, building facades, the ground plane (road, roadline,
/// sidewalk, verge), or sky when nothing is hit.
pub fn render_semantic_map(
    frame: &Frame,
    camera_id: usize,
    pose: &CameraPose,
    scene: &SceneConfig,
    resolution: (usize, usize),
) -> Result<SemanticMap, SemanticsError> {
    let (h, w) = resolution;
    if h < 16 || w < 16 {
        return Err(SemanticsError::ResolutionTooSmall(h, w));
    }
    validate_pose(pose)?;
    let cam = Pinhole::new(pose);
    let boxes: Vec<_> = frame.vehicles.iter().map(|v| v.bbox()).collect();
    let setback = scene.building_setback_m;
    let mut labels = vec![concept::SKY; h * w];
    for row in 0..h {
        for col in 0..w {
            let dir = cam.pixel_ray(row, col, h, w);
            let o = cam.origin;
            let mut best: Option<(f64, Primitive, u8)> = None;
            let mut offer = |t: f64, prim: Primitive, label: u8| {
                let better = match best {
                    None => true,
                    Some((bt, bp, _)) => t < bt || (t == bt && prim > bp),
                };
                if better {
                    best = Some((t, prim, label));
                }
            };
            if dir.z < 0.0 {
                let t = -o.z / dir.z;
                let p = o + dir * t;
                offer(t, Primitive::Surface, surface_label(p.x, p.y, scene));
            }
            if scene.building_height_m > 0.0 && dir.y != 0.0 {
                for side in [-setback, setback] {
                    let t = (side - o.y) / dir.y;
                    if t > 0.0 {
                        let z = o.z + dir.z * t;
                        if (0.0..=scene.building_height_m).contains(&z) {
                            offer(t, Primitive::Building, concept::BUILDING);
                        }
                    }
                }
            }
            for b in &boxes {
                if let Some(t) = b.ray_hit(o, dir) {
                    offer(t, Primitive::Vehicle, concept::VEHICLE);
                }
            }
            if let Some((_, _, label)) = best {
                labels[row * w + col] = label;
            }
        }
    }
    Ok(SemanticMap { camera_id, height: h, width: w, labels })
}

/// Zero-mask of one concept: 1 where the map carries that label.
pub fn extract_mask(map: &SemanticMap, concept: usize) -> Result<ConceptMask, SemanticsError> {
    if concept >= M_CON {
        return Err(SemanticsError::ConceptOutOfRange(concept));
    }
    let c = concept as u8;
    Ok(ConceptMask {
        concept,
        height: map.height,
        width: map.width,
        mask: map.labels.iter().map(|&l| u8::from(l == c)).collect(),
    })
}

/// Replaces each pixel, independently with probability `p`, by a label drawn
/// uniformly from the whole catalog (so it may redraw its own label).
pub fn corrupt_map(map: &SemanticMap, p: f64, rng: &mut Stream) -> Result<SemanticMap, SemanticsError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(SemanticsError::BadProbability(p));
    }
    let labels = map
        .labels
        .iter()
        .map(|&l| {
            let flip = rng.random::<f64>() < p;
            let draw = rng.random_range(0..M_CON as u8);
            if flip {
                draw
            } else {
                l
            }
        })
        .collect();
    Ok(SemanticMap { labels, ..map.clone() })
}

/// Fraction of pixels whose predicted label equals the truth, pooled over
/// every pixel of every map.
pub fn pixel_accuracy(pred: &[SemanticMap], truth: &[SemanticMap]) -> Result<f64, SemanticsError> {
    if pred.len() != truth.len() {
        return Err(SemanticsError::ShapeMismatch(format!("{} vs {} maps", pred.len(), truth.len())));
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    for (p, t) in pred.iter().zip(truth) {
        if (p.height, p.width) != (t.height, t.width) || p.labels.len() != t.labels.len() {
            return Err(SemanticsError::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                p.height, p.width, t.height, t.width
            )));
        }
        hits += p.labels.iter().zip(&t.labels).filter(|(a, b)| a == b).count();
        total += p.labels.len();
    }
    if total == 0 {
        return Err(SemanticsError::ShapeMismatch("no pixels".into()));
    }
    Ok(hits as f64 / total as f64)
}
