//! Labeled sample generation and the on-disk dataset container.
//!
//! A container is a directory with `manifest.json` and one little-endian,
//! row-major blob per array kind. The manifest records every blob's dtype,
//! shape and SHA-256 digest; loading verifies all three.

use crate::beams::{dft_codebook, optimal_beam, BeamError};
use crate::channel::{assemble_channel, blockage_label, trace_paths, ChannelError, ChannelMatrix, RayTraceConfig};
use crate::predictor::SampleRecord;
use crate::rng;
use crate::scene::{generate_scenario, SceneConfig, SceneError};
use crate::semantics::{corrupt_map, render_semantic_map, SemanticMap, SemanticsError, CONCEPT_NAMES};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("invalid dataset configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Beam(#[from] BeamError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error("no usable samples")]
    NoSamples,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("blob {name}: {reason}")]
    Blob { name: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub scene: SceneConfig,
    pub raytrace: RayTraceConfig,
    /// Codebook size; `None` uses one beam per antenna.
    pub codebook_size: Option<usize>,
    /// Semantic map (height, width).
    pub resolution: (usize, usize),
    /// Blockage horizons in slots.
    pub horizons: Vec<usize>,
    /// Keep every `sample_stride`-th frame.
    pub sample_stride: usize,
    /// Per-pixel label corruption probability applied to stored maps.
    pub label_noise: f64,
    pub store_channels: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            raytrace: RayTraceConfig::default(),
            codebook_size: None,
            resolution: (80, 160),
            horizons: vec![1, 6, 11, 16, 21, 26, 31, 36],
            sample_stride: 1,
            label_noise: 0.0,
            store_channels: true,
        }
    }
}

impl DatasetConfig {
    pub fn codebook_size(&self) -> usize {
        self.codebook_size.unwrap_or(self.raytrace.antennas)
    }

    pub fn max_horizon(&self) -> usize {
        self.horizons.iter().copied().max().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        self.scene.validate()?;
        self.raytrace.validate()?;
        let bad = |m: &str| Err(DatasetError::Invalid(m.to_string()));
        if self.codebook_size() == 0 || self.codebook_size() > usize::from(u16::MAX) {
            return bad("codebook size must lie in 1..=65535");
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return bad("horizons must be a non-empty list of positive slot counts");
        }
        if self.sample_stride == 0 {
            return bad("sample_stride must be positive");
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub samples: Vec<SampleRecord>,
    /// Per-sample channels at f32 precision, when stored.
    pub channels: Option<Vec<ChannelMatrix>>,
}

impl Dataset {
    pub fn cameras(&self) -> usize {
        self.config.scene.camera_poses.len()
    }

    pub fn beam_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| usize::from(s.beam_label)).collect()
    }

    /// Blockage labels (0/1) at the `h`-th configured horizon.
    pub fn blockage_labels(&self, horizon_index: usize) -> Vec<usize> {
        self.samples.iter().map(|s| usize::from(s.blockage[horizon_index])).collect()
    }

    pub fn horizon_index(&self, horizon: usize) -> Option<usize> {
        self.config.horizons.iter().position(|&h| h == horizon)
    }

    /// Replaces every beam label with a function of one concept mask: the
    /// index of the equal-width column band of the first camera that holds
    /// the most pixels of `concept` (band 0 when there are none). Channels
    /// no longer match the labels and are dropped.
    pub fn plant_beam_labels(&mut self, concept: usize) {
        let bands = self.config.codebook_size();
        for s in &mut self.samples {
            let m = &s.maps[0];
            let mut counts = vec![0usize; bands];
            for row in 0..m.height {
                for col in 0..m.width {
                    if usize::from(m.get(row, col)) == concept {
                        counts[col * bands / m.width] += 1;
                    }
                }
            }
            let best = counts.iter().enumerate().fold(0, |b, (i, &c)| if c > counts[b] { i } else { b });
            s.beam_label = best as u16;
        }
        self.channels = None;
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Simulates the scenario and labels every usable frame.
///
/// A frame is skipped when the target user changes within the longest
/// horizon, when no path reaches the target (zero optimal rate), or when
/// fewer than `max_horizon` frames follow it.
pub fn generate(config: &DatasetConfig) -> Result<Dataset, DatasetError> {
    config.validate()?;
    let frames = generate_scenario(&config.scene)?;
    let codebook = dft_codebook(config.raytrace.antennas, config.codebook_size())?;
    let max_h = config.max_horizon();
    let last = frames.len().saturating_sub(max_h);
    let candidates: Vec<usize> = (0..last).step_by(config.sample_stride).collect();
    let rt = &config.raytrace;
    let scene = &config.scene;

    let results: Vec<Option<(SampleRecord, ChannelMatrix)>> = candidates
        .par_iter()
        .map(|&t| -> Result<Option<(SampleRecord, ChannelMatrix)>, DatasetError> {
            let frame = &frames[t];
            let target = frame.target_user_id;
            if frames[t..=t + max_h].iter().any(|f| f.target_user_id != target) {
                return Ok(None);
            }
            let paths = trace_paths(frame, scene, rt);
            if paths.is_empty() {
                return Ok(None);
            }
            let channel = assemble_channel(&paths, rt).to_f32_precision();
            let eval = optimal_beam(&channel, &codebook, rt.tx_power_w, rt.noise_power_w)?;
            if !(eval.optimal_rate() > 0.0) {
                return Ok(None);
            }
            let blockage =
                config.horizons.iter().map(|&h| blockage_label(&frames, t, h, scene, rt)).collect::<Result<Vec<_>, _>>()?;
            let mut maps = Vec::with_capacity(scene.camera_poses.len());
            for (cam, pose) in scene.camera_poses.iter().enumerate() {
                let map = render_semantic_map(frame, cam, pose, scene, config.resolution)?;
                let map = if config.label_noise > 0.0 {
                    let mut s = rng::indexed_stream(scene.seed, &format!("label_noise/{cam}"), t as u64);
                    corrupt_map(&map, config.label_noise, &mut s)?
                } else {
                    map
                };
                maps.push(map);
            }
            let p = frame.user_antenna();
            let record = SampleRecord {
                maps,
                location: [round_f32(p.x), round_f32(p.y), round_f32(p.z)],
                beam_label: eval.optimal_index as u16,
                blockage,
                frame: t as u32,
                user: target,
            };
            Ok(Some((record, channel)))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let (samples, channels): (Vec<_>, Vec<_>) = results.into_iter().flatten().unzip();
    if samples.is_empty() {
        return Err(DatasetError::NoSamples);
    }
    log::info!("generated {} samples from {} frames", samples.len(), frames.len());
    Ok(Dataset { config: config.clone(), samples, channels: config.store_channels.then_some(channels) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobInfo {
    pub file: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config: DatasetConfig,
    pub catalog: Vec<String>,
    pub resolution: (usize, usize),
    pub cameras: usize,
    pub horizons: Vec<usize>,
    pub samples: usize,
    pub blobs: BTreeMap<String, BlobInfo>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn dtype_size(dtype: &str) -> usize {
    match dtype {
        "u8" => 1,
        "u16" => 2,
        "u32" | "f32" => 4,
        _ => 0,
    }
}

struct Blobs(Vec<(String, &'static str, Vec<usize>, Vec<u8>)>);

impl Blobs {
    fn push(&mut self, name: &str, dtype: &'static str, shape: Vec<usize>, bytes: Vec<u8>) {
        debug_assert_eq!(bytes.len(), shape.iter().product::<usize>() * dtype_size(dtype));
        self.0.push((name.to_string(), dtype, shape, bytes));
    }
}

/// Serializes the dataset; returns the manifest written.
pub fn write(dataset: &Dataset, dir: &Path) -> Result<Manifest, DatasetError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let n = dataset.samples.len();
    let cams = dataset.cameras();
    let (h, w) = dataset.config.resolution;
    let horizons = dataset.config.horizons.len();
    let mut blobs = Blobs(Vec::new());

    let mut labels = Vec::with_capacity(n * cams * h * w);
    let mut loc = Vec::with_capacity(n * 12);
    let mut beam = Vec::with_capacity(n * 2);
    let mut block = Vec::with_capacity(n * horizons);
    let mut meta = Vec::with_capacity(n * 8);
    for s in &dataset.samples {
        if s.maps.len() != cams || s.blockage.len() != horizons {
            return Err(DatasetError::Invalid(format!("sample at frame {} has inconsistent shape", s.frame)));
        }
        for m in &s.maps {
            if (m.height, m.width) != (h, w) {
                return Err(DatasetError::Invalid(format!("map at frame {} has size {}x{}", s.frame, m.height, m.width)));
            }
            labels.extend_from_slice(&m.labels);
        }
        for v in s.location {
            loc.extend_from_slice(&(v as f32).to_le_bytes());
        }
        beam.extend_from_slice(&s.beam_label.to_le_bytes());
        block.extend(s.blockage.iter().map(|&b| u8::from(b)));
        meta.extend_from_slice(&s.frame.to_le_bytes());
        meta.extend_from_slice(&s.user.to_le_bytes());
    }
    blobs.push("labels", "u8", vec![n, cams, h, w], labels);
    blobs.push("locations", "f32", vec![n, 3], loc);
    blobs.push("beam_labels", "u16", vec![n], beam);
    blobs.push("blockage", "u8", vec![n, horizons], block);
    blobs.push("meta", "u32", vec![n, 2], meta);
    if let Some(chs) = &dataset.channels {
        let k = dataset.config.raytrace.subcarriers;
        let nt = dataset.config.raytrace.antennas;
        let mut bytes = Vec::with_capacity(n * k * nt * 8);
        for c in chs {
            if (c.subcarriers, c.antennas) != (k, nt) {
                return Err(DatasetError::Invalid("channel shape differs from the configuration".into()));
            }
            for z in &c.entries {
                bytes.extend_from_slice(&(z.re as f32).to_le_bytes());
                bytes.extend_from_slice(&(z.im as f32).to_le_bytes());
            }
        }
        blobs.push("channels", "f32", vec![n, k, nt, 2], bytes);
    }

    let mut infos = BTreeMap::new();
    for (name, dtype, shape, bytes) in blobs.0 {
        let file = format!("{name}.bin");
        let path = dir.join(&file);
        std::fs::write(&path, &bytes).map_err(io_err(&path))?;
        infos.insert(name, BlobInfo { file, dtype: dtype.to_string(), shape, sha256: sha256_hex(&bytes) });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        config: dataset.config.clone(),
        catalog: CONCEPT_NAMES.iter().map(|s| s.to_string()).collect(),
        resolution: (h, w),
        cameras: cams,
        horizons: dataset.config.horizons.clone(),
        samples: n,
        blobs: infos,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(DatasetError::Manifest(format!("unsupported schema version {}", m.schema_version)));
    }
    Ok(m)
}

fn load_blob(dir: &Path, m: &Manifest, name: &str, dtype: &str, shape: &[usize]) -> Result<Vec<u8>, DatasetError> {
    let blob_err = |reason: String| DatasetError::Blob { name: name.to_string(), reason };
    let info = m.blobs.get(name).ok_or_else(|| blob_err("missing from manifest".into()))?;
    if info.dtype != dtype || info.shape != shape {
        return Err(blob_err(format!("expected {dtype} {shape:?}, manifest says {} {:?}", info.dtype, info.shape)));
    }
    let path = dir.join(&info.file);
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    let expected = shape.iter().product::<usize>() * dtype_size(dtype);
    if bytes.len() != expected {
        return Err(blob_err(format!("{} bytes, expected {expected}", bytes.len())));
    }
    if sha256_hex(&bytes) != info.sha256 {
        return Err(blob_err("hash mismatch".into()));
    }
    Ok(bytes)
}

fn f32s(bytes: &[u8]) -> impl Iterator<Item = f32> + '_ {
    bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap()))
}

pub fn read(dir: &Path) -> Result<Dataset, DatasetError> {
    let m = read_manifest(dir)?;
    let n = m.samples;
    let cams = m.cameras;
    let (h, w) = m.resolution;
    let nh = m.horizons.len();
    if m.config.resolution != m.resolution || m.config.horizons != m.horizons || m.config.scene.camera_poses.len() != cams {
        return Err(DatasetError::Manifest("manifest fields disagree with the embedded configuration".into()));
    }
    let labels = load_blob(dir, &m, "labels", "u8", &[n, cams, h, w])?;
    let loc: Vec<f32> = f32s(&load_blob(dir, &m, "locations", "f32", &[n, 3])?).collect();
    let beam = load_blob(dir, &m, "beam_labels", "u16", &[n])?;
    let block = load_blob(dir, &m, "blockage", "u8", &[n, nh])?;
    let meta = load_blob(dir, &m, "meta", "u32", &[n, 2])?;
    if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= CONCEPT_NAMES.len()) {
        return Err(DatasetError::Blob { name: "labels".into(), reason: format!("concept index {bad} out of range") });
    }
    let mut samples = Vec::with_capacity(n);
    let plane = h * w;
    for i in 0..n {
        let maps = (0..cams)
            .map(|c| {
                let off = (i * cams + c) * plane;
                SemanticMap { camera_id: c, height: h, width: w, labels: labels[off..off + plane].to_vec() }
            })
            .collect();
        let u32_at = |k: usize| u32::from_le_bytes(meta[k * 4..k * 4 + 4].try_into().unwrap());
        samples.push(SampleRecord {
            maps,
            location: [f64::from(loc[i * 3]), f64::from(loc[i * 3 + 1]), f64::from(loc[i * 3 + 2])],
            beam_label: u16::from_le_bytes([beam[i * 2], beam[i * 2 + 1]]),
            blockage: block[i * nh..(i + 1) * nh].iter().map(|&b| b != 0).collect(),
            frame: u32_at(i * 2),
            user: u32_at(i * 2 + 1),
        });
    }
    let channels = if m.blobs.contains_key("channels") {
        let k = m.config.raytrace.subcarriers;
        let nt = m.config.raytrace.antennas;
        let raw: Vec<f32> = f32s(&load_blob(dir, &m, "channels", "f32", &[n, k, nt, 2])?).collect();
        Some(
            raw.chunks_exact(k * nt * 2)
                .map(|c| ChannelMatrix {
                    subcarriers: k,
                    antennas: nt,
                    entries: c.chunks_exact(2).map(|z| Complex64::new(f64::from(z[0]), f64::from(z[1]))).collect(),
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(Dataset { config: m.config, samples, channels })
}
