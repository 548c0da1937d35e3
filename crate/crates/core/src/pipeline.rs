//! End-to-end procedure: generate and label a dataset, select beam and
//! blockage feature sets, train the final predictors, evaluate them on the
//! test split and write the run report.
//!
//! Commands communicate only through files in a run directory:
//!
//! | file | written by |
//! |---|---|
//! | `dataset/` | [`cmd_generate`] |
//! | `selection_{task}.json`, `trace_{task}.jsonl` | [`cmd_select`] |
//! | `model_{task}.esnn`, `model_{task}.json` | [`cmd_train`] |
//! | `eval_{task}.json` | [`cmd_eval`] |
//! | `report.json`, `metrics.csv` | [`cmd_report`] |

use crate::beams::{dft_codebook, optimal_beam, topg_accuracy, topg_indices, trr_from_rates, BeamError};
use crate::dataset::{self, Dataset, DatasetConfig, DatasetError};
use crate::featsel::{sffs, Evaluator, FsError, SffsOptions, TraceEvent};
use crate::features::{FeatureId, FeatureSet};
use crate::predictor::checkpoint;
use crate::predictor::train::{evaluate_outputs, train, TrainConfig};
use crate::predictor::{ArchConfig, HeadKind, InputLayout, Network, PredictorError};
use crate::rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("missing artifacts: {}", .0.join(", "))]
    MissingArtifacts(Vec<String>),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Selection(#[from] FsError),
    #[error(transparent)]
    Beam(#[from] BeamError),
}

impl PipelineError {
    /// True for failures of the file system rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            PipelineError::Io { .. }
                | PipelineError::MissingArtifacts(_)
                | PipelineError::Dataset(DatasetError::Io { .. })
                | PipelineError::Predictor(PredictorError::Io(_))
        )
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io { path: path.display().to_string(), source }
}

fn invalid(msg: impl Into<String>) -> PipelineError {
    PipelineError::Validation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Beam,
    Blockage,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Beam => "beam",
            TaskKind::Blockage => "blockage",
        })
    }
}

impl FromStr for TaskKind {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "beam" => Ok(TaskKind::Beam),
            "blockage" => Ok(TaskKind::Blockage),
            _ => Err(invalid(format!("unknown task {s:?}; expected beam or blockage"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    /// Training epochs per evaluated feature set.
    pub epochs: usize,
    /// Removal slack: a feature is dropped when the accuracy without it is
    /// above the current accuracy minus this value.
    pub tolerance: f64,
    pub v_max: Option<usize>,
    pub pinned: Vec<FeatureId>,
    /// Re-run cached evaluations to detect non-determinism.
    pub audit: bool,
    /// Architectures used while searching; the final ones when absent.
    pub beam_arch: Option<ArchConfig>,
    pub blockage_arch: Option<ArchConfig>,
    /// Horizon whose labels drive the blockage search.
    pub blockage_horizon: Option<usize>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            tolerance: 0.01,
            v_max: None,
            pinned: vec![FeatureId::Location],
            audit: false,
            beam_arch: None,
            blockage_arch: None,
            blockage_horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub beam_arch: ArchConfig,
    pub blockage_arch: ArchConfig,
    pub selection: SelectionConfig,
    pub g_list: Vec<usize>,
    /// Frames per contiguous block; whole blocks go to one split.
    pub split_block_frames: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
            beam_arch: ArchConfig::desk_beam(),
            blockage_arch: ArchConfig::desk_blockage(),
            selection: SelectionConfig::default(),
            g_list: vec![1, 2, 3, 5],
            split_block_frames: 100,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.dataset.validate()?;
        self.train.validate()?;
        self.beam_arch.validate()?;
        self.blockage_arch.validate()?;
        if self.g_list.is_empty() || self.g_list.contains(&0) {
            return Err(invalid("g_list must be non-empty with positive entries"));
        }
        let m = self.dataset.codebook_size();
        if let Some(g) = self.g_list.iter().find(|&&g| g > m) {
            return Err(invalid(format!("G = {g} exceeds the codebook size {m}")));
        }
        if self.selection.epochs == 0 {
            return Err(invalid("selection epochs must be positive"));
        }
        if !(self.selection.tolerance >= 0.0) {
            return Err(invalid("selection tolerance must be non-negative"));
        }
        Ok(())
    }
}

/// Disjoint train/validation/test sample indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Assigns whole groups (all samples sharing a key) to splits in
/// a seeded random order, filling train, then validation, then test by
/// sample count.
pub fn grouped_split(keys: &[u32], fractions: [f64; 3], seed: u64) -> Result<Split, PipelineError> {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &u) in keys.iter().enumerate() {
        groups.entry(u).or_default().push(i);
    }
    if groups.len() < 3 {
        return Err(invalid(format!("{} groups cannot fill three splits", groups.len())));
    }
    let mut order: Vec<(u64, u32)> =
        groups.keys().map(|&u| (rng::child_seed(rng::child_seed(seed, "split"), &u.to_string()), u)).collect();
    order.sort();
    let n = keys.len() as f64;
    let train_target = fractions[0] * n;
    let val_target = (fractions[0] + fractions[1]) * n;
    let mut split = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    let mut assigned = 0usize;
    let last = order.len() - 1;
    for (pos, (_, u)) in order.iter().enumerate() {
        let members = &groups[u];
        // keep one group each for validation and test
        let remaining = last - pos;
        let bucket = if (assigned as f64) < train_target && remaining >= 2 {
            &mut split.train
        } else if ((assigned as f64) < val_target || split.val.is_empty()) && remaining >= 1 && split.test.is_empty() {
            &mut split.val
        } else {
            &mut split.test
        };
        bucket.extend_from_slice(members);
        assigned += members.len();
    }
    for s in [&mut split.train, &mut split.val, &mut split.test] {
        s.sort_unstable();
    }
    Ok(split)
}

/// Splits by blocks of `block_frames` consecutive frames.
pub fn dataset_split(ds: &Dataset, cfg: &TrainConfig, block_frames: u32) -> Result<Split, PipelineError> {
    if block_frames == 0 {
        return Err(invalid("split block length must be positive"));
    }
    let keys: Vec<u32> = ds.samples.iter().map(|s| s.frame / block_frames).collect();
    grouped_split(&keys, cfg.split, cfg.seed)
}

fn task_labels(ds: &Dataset, task: TaskKind, horizon: Option<usize>) -> Result<(HeadKind, Vec<usize>), PipelineError> {
    match task {
        TaskKind::Beam => Ok((HeadKind::Beam { classes: ds.config.codebook_size() }, ds.beam_labels())),
        TaskKind::Blockage => {
            let h = horizon.unwrap_or(ds.config.horizons[0]);
            let idx = ds.horizon_index(h).ok_or_else(|| invalid(format!("horizon {h} is not in the dataset")))?;
            Ok((HeadKind::Blockage, ds.blockage_labels(idx)))
        }
    }
}

/// Concepts with no pixel in any map of the dataset.
pub fn absent_concepts(ds: &Dataset) -> BTreeSet<FeatureId> {
    let mut seen = [false; crate::semantics::M_CON];
    for s in &ds.samples {
        for m in &s.maps {
            for &l in &m.labels {
                seen[usize::from(l)] = true;
            }
        }
    }
    (0..seen.len()).filter(|&c| !seen[c]).map(|c| FeatureId::Concept(c as u8)).collect()
}

/// Validation accuracy of a freshly trained network for each feature set.
/// Every call trains with the same seed, so networks for different sets
/// share initial weights for the layers they have in common. An all-zero
/// mask channel then leaves training bit-for-bit unchanged, so sets that
/// differ only by absent concepts share one training run.
pub struct TrainingEvaluator<'a> {
    pub dataset: &'a Dataset,
    pub labels: Vec<usize>,
    pub split: Split,
    pub head: HeadKind,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub absent: BTreeSet<FeatureId>,
    /// Training runs performed.
    pub calls: usize,
    memo: BTreeMap<BTreeSet<FeatureId>, f64>,
}

impl<'a> TrainingEvaluator<'a> {
    pub fn new(dataset: &'a Dataset, labels: Vec<usize>, split: Split, head: HeadKind, arch: ArchConfig, train: TrainConfig) -> Self {
        let absent = absent_concepts(dataset);
        Self { dataset, labels, split, head, arch, train, absent, calls: 0, memo: BTreeMap::new() }
    }
}

impl Evaluator<FeatureId> for TrainingEvaluator<'_> {
    fn evaluate(&mut self, set: &BTreeSet<FeatureId>) -> Result<f64, FsError> {
        let reduced: BTreeSet<FeatureId> = set.difference(&self.absent).copied().collect();
        if let Some(&acc) = self.memo.get(&reduced) {
            return Ok(acc);
        }
        self.calls += 1;
        let features = FeatureSet(reduced.clone());
        let trained = train(
            &self.dataset.samples,
            &self.labels,
            &self.split.train,
            &self.split.val,
            &features,
            self.head,
            &self.arch,
            &self.train,
        )
        .map_err(|e| FsError::Evaluation(e.to_string()))?;
        log::info!("evaluated {features}: {:.4}", trained.val_accuracy);
        self.memo.insert(reduced, trained.val_accuracy);
        Ok(trained.val_accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub task: TaskKind,
    pub horizon: Option<usize>,
    pub features: FeatureSet,
    pub accuracy: f64,
    pub evaluations: usize,
    pub iterations: usize,
}

/// Floating feature selection with the training-based evaluator.
pub fn select_features(
    ds: &Dataset,
    task: TaskKind,
    cfg: &PipelineConfig,
) -> Result<(SelectionResult, Vec<TraceEvent>), PipelineError> {
    cfg.validate()?;
    let horizon = match task {
        TaskKind::Beam => None,
        TaskKind::Blockage => Some(cfg.selection.blockage_horizon.unwrap_or(ds.config.horizons[0])),
    };
    let (head, labels) = task_labels(ds, task, horizon)?;
    let split = dataset_split(ds, &cfg.train, cfg.split_block_frames)?;
    let arch = match task {
        TaskKind::Beam => cfg.selection.beam_arch.clone().unwrap_or_else(|| cfg.beam_arch.clone()),
        TaskKind::Blockage => cfg.selection.blockage_arch.clone().unwrap_or_else(|| cfg.blockage_arch.clone()),
    };
    let train_cfg = TrainConfig {
        epochs: cfg.selection.epochs,
        seed: rng::child_seed(cfg.train.seed, &format!("select/{task}")),
        ..cfg.train.clone()
    };
    let evaluator = TrainingEvaluator::new(ds, labels, split, head, arch, train_cfg);
    let universal = FeatureSet::universal().0;
    let options = SffsOptions {
        pinned: cfg.selection.pinned.iter().copied().collect(),
        v_max: cfg.selection.v_max,
        tolerance: cfg.selection.tolerance,
        audit: cfg.selection.audit,
    };
    let out = sffs(&universal, evaluator, &options)?;
    log::info!("{task} selection: {} after {} evaluations", FeatureSet(out.selected.clone()), out.evaluations);
    Ok((
        SelectionResult {
            task,
            horizon,
            features: FeatureSet(out.selected),
            accuracy: out.accuracy,
            evaluations: out.evaluations,
            iterations: out.iterations,
        },
        out.trace,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| invalid(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn ensure_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Generates and labels a dataset and writes its container to `out`.
pub fn cmd_generate(cfg: &DatasetConfig, out: &Path) -> Result<dataset::Manifest, PipelineError> {
    cfg.validate()?;
    let ds = dataset::generate(cfg)?;
    Ok(dataset::write(&ds, out)?)
}

pub fn selection_file(task: TaskKind) -> String {
    format!("selection_{task}.json")
}

pub fn cmd_select(ds: &Dataset, task: TaskKind, cfg: &PipelineConfig, out: &Path) -> Result<SelectionResult, PipelineError> {
    ensure_dir(out)?;
    let (result, trace) = select_features(ds, task, cfg)?;
    let trace_path = out.join(format!("trace_{task}.jsonl"));
    let mut f = std::fs::File::create(&trace_path).map_err(io_err(&trace_path))?;
    for e in &trace {
        let line = serde_json::to_string(e).map_err(|e| invalid(e.to_string()))?;
        writeln!(f, "{line}").map_err(io_err(&trace_path))?;
    }
    write_json(&out.join(selection_file(task)), &result)?;
    Ok(result)
}

/// Sidecar describing a saved checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelInfo {
    pub task: TaskKind,
    pub horizon: Option<usize>,
    pub features: FeatureSet,
    pub arch: ArchConfig,
    pub head: HeadKind,
    pub layout: InputLayout,
    pub seed: u64,
    pub val_accuracy: f64,
    pub epoch_loss: Vec<f64>,
}

fn model_stem(task: TaskKind, horizon: Option<usize>) -> String {
    match (task, horizon) {
        (TaskKind::Blockage, Some(h)) => format!("blockage_h{h}"),
        _ => task.to_string(),
    }
}

/// Trains the final predictor on the training split and saves it.
pub fn cmd_train(
    ds: &Dataset,
    features: &FeatureSet,
    task: TaskKind,
    horizon: Option<usize>,
    cfg: &PipelineConfig,
    out: &Path,
) -> Result<ModelInfo, PipelineError> {
    cfg.validate()?;
    ensure_dir(out)?;
    let horizon = match task {
        TaskKind::Beam => None,
        TaskKind::Blockage => Some(horizon.unwrap_or(ds.config.horizons[0])),
    };
    let (head, labels) = task_labels(ds, task, horizon)?;
    let split = dataset_split(ds, &cfg.train, cfg.split_block_frames)?;
    let arch = match task {
        TaskKind::Beam => &cfg.beam_arch,
        TaskKind::Blockage => &cfg.blockage_arch,
    };
    let seed = rng::child_seed(cfg.train.seed, &format!("final/{}", model_stem(task, horizon)));
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let trained = train(&ds.samples, &labels, &split.train, &split.val, features, head, arch, &train_cfg)?;
    let stem = model_stem(task, horizon);
    checkpoint::save(&trained.net, &out.join(format!("model_{stem}.esnn")))?;
    let info = ModelInfo {
        task,
        horizon,
        features: features.clone(),
        arch: arch.clone(),
        head,
        layout: trained.net.layout.clone(),
        seed,
        val_accuracy: trained.val_accuracy,
        epoch_loss: trained.epoch_loss,
    };
    write_json(&out.join(format!("model_{stem}.json")), &info)?;
    Ok(info)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamEval {
    pub g: Vec<usize>,
    pub topg_accuracy: Vec<f64>,
    pub trr: Vec<f64>,
    pub n: usize,
    /// Test samples excluded from TRR because their optimal rate is zero.
    pub trr_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockageEval {
    pub horizon: usize,
    pub accuracy: f64,
    pub n: usize,
    /// Accuracy of always predicting the majority training label.
    pub majority_baseline: f64,
}

fn load_model(dir: &Path, stem: &str) -> Result<(ModelInfo, Network<f32>), PipelineError> {
    let info: ModelInfo = read_json(&dir.join(format!("model_{stem}.json")))?;
    let mut net = Network::<f32>::new(&info.arch, info.head, info.layout.clone(), 0)?;
    checkpoint::load(&mut net, &dir.join(format!("model_{stem}.esnn")))?;
    Ok((info, net))
}

pub fn eval_file(task: TaskKind, horizon: Option<usize>) -> String {
    format!("eval_{}.json", model_stem(task, horizon))
}

/// Scores a network on the test split: Top-G accuracy and rate ratio.
pub fn evaluate_beam(
    ds: &Dataset,
    net: &mut Network<f32>,
    features: &FeatureSet,
    g_list: &[usize],
    split: &Split,
    batch: usize,
) -> Result<BeamEval, PipelineError> {
    let channels = ds.channels.as_ref().ok_or_else(|| invalid("dataset has no stored channels; the rate ratio needs them"))?;
    let outputs = evaluate_outputs(net, &ds.samples, &split.test, features, batch)?;
    let labels: Vec<usize> = split.test.iter().map(|&i| usize::from(ds.samples[i].beam_label)).collect();
    let rt = &ds.config.raytrace;
    let codebook = dft_codebook(rt.antennas, ds.config.codebook_size())?;
    let rates = split
        .test
        .iter()
        .map(|&i| optimal_beam(&channels[i], &codebook, rt.tx_power_w, rt.noise_power_w).map(|e| e.rates))
        .collect::<Result<Vec<_>, _>>()?;
    let mut acc = Vec::new();
    let mut trr = Vec::new();
    let mut excluded = 0;
    for &g in g_list {
        let sets: Vec<Vec<usize>> = outputs.iter().map(|o| topg_indices(o, g)).collect();
        acc.push(topg_accuracy(&labels, &sets, g)?);
        let t = trr_from_rates(&rates, &sets, g)?;
        excluded = t.invalid;
        trr.push(t.value);
    }
    Ok(BeamEval { g: g_list.to_vec(), topg_accuracy: acc, trr, n: labels.len(), trr_excluded: excluded })
}

fn majority(labels: &[usize], idx: &[usize]) -> usize {
    let ones = idx.iter().filter(|&&i| labels[i] == 1).count();
    usize::from(ones * 2 > idx.len())
}

pub fn evaluate_blockage(
    ds: &Dataset,
    net: &mut Network<f32>,
    features: &FeatureSet,
    horizon: usize,
    split: &Split,
    batch: usize,
) -> Result<BlockageEval, PipelineError> {
    let (_, labels) = task_labels(ds, TaskKind::Blockage, Some(horizon))?;
    let outputs = evaluate_outputs(net, &ds.samples, &split.test, features, batch)?;
    let hits = outputs.iter().zip(&split.test).filter(|(o, &i)| usize::from(o[0] >= 0.5) == labels[i]).count();
    let maj = majority(&labels, &split.train);
    let base = split.test.iter().filter(|&&i| labels[i] == maj).count();
    let n = split.test.len();
    Ok(BlockageEval { horizon, accuracy: hits as f64 / n as f64, n, majority_baseline: base as f64 / n as f64 })
}

/// Loads a saved model and writes its test-split metrics.
pub fn cmd_eval(ds: &Dataset, task: TaskKind, horizon: Option<usize>, cfg: &PipelineConfig, dir: &Path) -> Result<serde_json::Value, PipelineError> {
    cfg.validate()?;
    let horizon = match task {
        TaskKind::Beam => None,
        TaskKind::Blockage => Some(horizon.unwrap_or(ds.config.horizons[0])),
    };
    let (info, mut net) = load_model(dir, &model_stem(task, horizon))?;
    let split = dataset_split(ds, &cfg.train, cfg.split_block_frames)?;
    let value = match task {
        TaskKind::Beam => {
            serde_json::to_value(evaluate_beam(ds, &mut net, &info.features, &cfg.g_list, &split, cfg.train.batch_size)?)
        }
        TaskKind::Blockage => serde_json::to_value(evaluate_blockage(
            ds,
            &mut net,
            &info.features,
            horizon.expect("set above"),
            &split,
            cfg.train.batch_size,
        )?),
    }
    .map_err(|e| invalid(e.to_string()))?;
    write_json(&dir.join(eval_file(task, horizon)), &value)?;
    Ok(value)
}

/// Training followed by evaluation.
pub fn cmd_train_eval(
    ds: &Dataset,
    features: &FeatureSet,
    task: TaskKind,
    horizon: Option<usize>,
    cfg: &PipelineConfig,
    dir: &Path,
) -> Result<serde_json::Value, PipelineError> {
    cmd_train(ds, features, task, horizon, cfg, dir)?;
    cmd_eval(ds, task, horizon, cfg, dir)
}

/// Echo of the run inputs, written first so the report can find everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub config: PipelineConfig,
    pub seed: u64,
    pub dataset_samples: usize,
    pub horizons: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub beam_features: FeatureSet,
    pub blockage_features: FeatureSet,
    pub metrics: Vec<MetricRow>,
    pub beam: BeamEval,
    pub blockage: Vec<BlockageEval>,
    pub config: PipelineConfig,
}

/// Records the effective configuration of a run directory.
pub fn write_run_info(dir: &Path, cfg: &PipelineConfig, ds: &Dataset) -> Result<(), PipelineError> {
    ensure_dir(dir)?;
    let info = RunInfo {
        config: cfg.clone(),
        seed: cfg.train.seed,
        dataset_samples: ds.samples.len(),
        horizons: ds.config.horizons.clone(),
    };
    write_json(&dir.join("run.json"), &info)
}

pub fn read_selection(dir: &Path, task: TaskKind) -> Result<SelectionResult, PipelineError> {
    read_json(&dir.join(selection_file(task)))
}

pub fn required_artifacts(horizons: &[usize]) -> Vec<String> {
    let mut v = vec![
        "run.json".to_string(),
        selection_file(TaskKind::Beam),
        selection_file(TaskKind::Blockage),
        eval_file(TaskKind::Beam, None),
    ];
    v.extend(horizons.iter().map(|&h| eval_file(TaskKind::Blockage, Some(h))));
    v
}

/// Collects the run artifacts into `report.json` and `metrics.csv`.
pub fn cmd_report(dir: &Path) -> Result<RunReport, PipelineError> {
    let run_path = dir.join("run.json");
    let horizons = if run_path.exists() { read_json::<RunInfo>(&run_path)?.horizons } else { Vec::new() };
    let missing: Vec<String> = required_artifacts(&horizons).into_iter().filter(|f| !dir.join(f).exists()).collect();
    if !missing.is_empty() {
        return Err(PipelineError::MissingArtifacts(missing));
    }
    let run: RunInfo = read_json(&run_path)?;
    let sel_beam: SelectionResult = read_json(&dir.join(selection_file(TaskKind::Beam)))?;
    let sel_block: SelectionResult = read_json(&dir.join(selection_file(TaskKind::Blockage)))?;
    let beam: BeamEval = read_json(&dir.join(eval_file(TaskKind::Beam, None)))?;
    let blockage: Vec<BlockageEval> = run
        .horizons
        .iter()
        .map(|&h| read_json(&dir.join(eval_file(TaskKind::Blockage, Some(h)))))
        .collect::<Result<_, _>>()?;
    let mut metrics = Vec::new();
    for (i, &g) in beam.g.iter().enumerate() {
        metrics.push(MetricRow { metric: format!("beam_top{g}_accuracy"), value: beam.topg_accuracy[i], n: beam.n, seed: run.seed });
    }
    for (i, &g) in beam.g.iter().enumerate() {
        metrics.push(MetricRow { metric: format!("beam_top{g}_trr"), value: beam.trr[i], n: beam.n - beam.trr_excluded, seed: run.seed });
    }
    for b in &blockage {
        metrics.push(MetricRow { metric: format!("blockage_h{}_accuracy", b.horizon), value: b.accuracy, n: b.n, seed: run.seed });
    }
    let report = RunReport {
        seed: run.seed,
        beam_features: sel_beam.features,
        blockage_features: sel_block.features,
        metrics,
        beam,
        blockage,
        config: run.config,
    };
    write_json(&dir.join("report.json"), &report)?;
    let mut csv = String::from("metric,value,n,seed\n");
    for r in &report.metrics {
        csv.push_str(&format!("{},{},{},{}\n", r.metric, r.value, r.n, r.seed));
    }
    let csv_path = dir.join("metrics.csv");
    std::fs::write(&csv_path, csv).map_err(io_err(&csv_path))?;
    Ok(report)
}

/// Runs every step into `dir`: generation, both selections, final
/// training and evaluation per task and horizon, and the report.
pub fn run_all(cfg: &PipelineConfig, dir: &Path) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    ensure_dir(dir)?;
    let started = std::time::Instant::now();
    let data_dir: PathBuf = dir.join("dataset");
    cmd_generate(&cfg.dataset, &data_dir)?;
    let ds = dataset::read(&data_dir)?;
    write_run_info(dir, cfg, &ds)?;
    let beam_sel = cmd_select(&ds, TaskKind::Beam, cfg, dir)?;
    let block_sel = cmd_select(&ds, TaskKind::Blockage, cfg, dir)?;
    cmd_train_eval(&ds, &beam_sel.features, TaskKind::Beam, None, cfg, dir)?;
    for &h in &ds.config.horizons {
        cmd_train_eval(&ds, &block_sel.features, TaskKind::Blockage, Some(h), cfg, dir)?;
    }
    let report = cmd_report(dir)?;
    write_json(&dir.join("timing.json"), &serde_json::json!({ "wall_clock_s": started.elapsed().as_secs_f64() }))?;
    Ok(report)
}
