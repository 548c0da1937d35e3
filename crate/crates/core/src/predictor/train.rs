//! Mini-batch training with Adam and evaluation helpers.

use super::input::{build_batch, layout_for, SampleRecord};
use super::layers::Mode;
use super::network::{ArchConfig, HeadKind, Network};
use super::tensor::{r, Act, Real};
use super::{beam_loss, blockage_loss, blockage_loss_grad, sigmoid, softmax, PredictorError};
use crate::beams::argmax;
use crate::features::FeatureSet;
use crate::rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub type Task = HeadKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 20,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            split: [0.7, 0.15, 0.15],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::Config(m.to_string()));
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return bad("learning rate, batch size and epochs must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam moments must lie in [0, 1) and epsilon must be positive");
        }
        if self.split.iter().any(|&f| !(f > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split fractions must be positive and sum to 1");
        }
        Ok(())
    }
}

/// Adam over every trainable tensor of a network.
pub struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(net: &Network<f32>, cfg: &TrainConfig) -> Self {
        let sizes: Vec<usize> = net.params().iter().map(|p| p.value.len()).collect();
        Self {
            lr: cfg.learning_rate,
            b1: cfg.beta1,
            b2: cfg.beta2,
            eps: cfg.epsilon,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, net: &mut Network<f32>) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        let (b1, b2) = (self.b1 as f32, self.b2 as f32);
        let step = (self.lr * c2.sqrt() / c1) as f32;
        let eps_hat = (self.eps * c2.sqrt()) as f32;
        for ((p, m), v) in net.params_mut().into_iter().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                p.value[i] -= step * m[i] / (v[i].sqrt() + eps_hat);
            }
        }
    }
}

/// Mean loss over the batch and its gradient with respect to the outputs.
pub fn loss_and_grad<T: Real>(head: HeadKind, out: &Act<T>, labels: &[usize]) -> (f64, Act<T>) {
    let n = out.n;
    let k = out.per_sample();
    let mut g = Vec::with_capacity(n * k);
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let z: Vec<f64> = out.sample(i).iter().map(|v| v.to_f64().unwrap()).collect();
        match head {
            HeadKind::Beam { .. } => {
                total += beam_loss(&z, label);
                let p = softmax(&z);
                g.extend(p.iter().enumerate().map(|(j, &pj)| r::<T>((pj - f64::from(u8::from(j == label))) / n as f64)));
            }
            HeadKind::Blockage => {
                total += blockage_loss(sigmoid(z[0]), label == 1);
                g.push(r::<T>(blockage_loss_grad(z[0], label == 1) / n as f64));
            }
        }
    }
    (total / n as f64, Act::matrix(n, k, g))
}

fn check_labels(head: HeadKind, labels: &[usize]) -> Result<(), PredictorError> {
    let classes = match head {
        HeadKind::Beam { classes } => classes,
        HeadKind::Blockage => 2,
    };
    match labels.iter().find(|&&l| l >= classes) {
        Some(&label) => Err(PredictorError::Label { label, classes }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub net: Network<f32>,
    pub val_accuracy: f64,
    /// Mean training loss per epoch.
    pub epoch_loss: Vec<f64>,
}

/// Trains a fresh network on `train_idx` and scores it on `val_idx`.
/// `labels` is indexed like `samples`: beam indices, or 0/1 for blockage.
#[allow(clippy::too_many_arguments)]
pub fn train(
    samples: &[SampleRecord],
    labels: &[usize],
    train_idx: &[usize],
    val_idx: &[usize],
    features: &FeatureSet,
    head: HeadKind,
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<Trained, PredictorError> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(PredictorError::EmptySplit("training"));
    }
    if val_idx.is_empty() {
        return Err(PredictorError::EmptySplit("validation"));
    }
    if labels.len() != samples.len() {
        return Err(PredictorError::Shape(format!("{} labels for {} samples", labels.len(), samples.len())));
    }
    check_labels(head, labels)?;
    let layout = layout_for(&samples[train_idx[0]], features, arch.input_pool)?;
    let mut net = Network::<f32>::new(arch, head, layout, cfg.seed)?;
    let mut adam = Adam::new(&net, cfg);
    let mut shuffle = rng::stream(cfg.seed, "train/shuffle");
    let mut drop = rng::stream(cfg.seed, "train/dropout");
    let mut order = train_idx.to_vec();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            // a single sample has no batch statistics
            if batch.len() < 2 {
                continue;
            }
            let (loc, masks) = build_batch::<f32>(samples, batch, features, arch.input_pool)?;
            let (out, cache) = net.forward(&loc, &masks, Mode::Train, Some(&mut drop))?;
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, g) = loss_and_grad(head, &out, &batch_labels);
            net.zero_grad();
            net.backward(&cache, &g);
            adam.step(&mut net);
            sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let mean = if seen > 0 { sum / seen as f64 } else { f64::NAN };
        log::debug!("epoch {epoch}: loss {mean:.5}");
        epoch_loss.push(mean);
    }
    let outputs = evaluate_outputs(&mut net, samples, val_idx, features, cfg.batch_size)?;
    let val_labels: Vec<usize> = val_idx.iter().map(|&i| labels[i]).collect();
    let val_accuracy = top1_accuracy(head, &outputs, &val_labels);
    Ok(Trained { net, val_accuracy, epoch_loss })
}

/// Evaluation-mode outputs: logits for beam, the probability for blockage.
pub fn evaluate_outputs(
    net: &mut Network<f32>,
    samples: &[SampleRecord],
    indices: &[usize],
    features: &FeatureSet,
    batch_size: usize,
) -> Result<Vec<Vec<f64>>, PredictorError> {
    let mut out = Vec::with_capacity(indices.len());
    for batch in indices.chunks(batch_size.max(1)) {
        let (loc, masks) = build_batch::<f32>(samples, batch, features, net.arch.input_pool)?;
        let (y, _) = net.forward(&loc, &masks, Mode::Eval, None)?;
        for i in 0..y.n {
            let z: Vec<f64> = y.sample(i).iter().map(|&v| f64::from(v)).collect();
            out.push(match net.head_kind {
                HeadKind::Beam { .. } => z,
                HeadKind::Blockage => vec![sigmoid(z[0])],
            });
        }
    }
    Ok(out)
}

/// Predicted class: argmax of the logits, or probability at least 0.5.
pub fn decide(head: HeadKind, output: &[f64]) -> usize {
    match head {
        HeadKind::Beam { .. } => argmax(output),
        HeadKind::Blockage => usize::from(output[0] >= 0.5),
    }
}

pub fn top1_accuracy(head: HeadKind, outputs: &[Vec<f64>], labels: &[usize]) -> f64 {
    let hits = outputs.iter().zip(labels).filter(|(o, &l)| decide(head, o) == l).count();
    hits as f64 / labels.len().max(1) as f64
}
