//! Beam and blockage predictors: a location encoder fused with a
//! convolutional encoder over stacked concept masks, trained with Adam.

pub mod checkpoint;
pub mod gradcheck;
pub mod input;
pub mod layers;
pub mod network;
pub mod tensor;
pub mod train;

pub use input::{build_batch, build_input, SampleRecord};
pub use layers::Mode;
pub use network::{ArchConfig, HeadKind, InputLayout, Network};
pub use tensor::{Act, Real};
pub use train::{evaluate_outputs, train, Task, TrainConfig, Trained};

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error("feature set must contain location")]
    MissingLocation,
    #[error("feature set is empty")]
    EmptyFeatures,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty {0} split")]
    EmptySplit(&'static str),
    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `-log softmax(logits)[label]` via log-sum-exp.
pub fn beam_loss(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

pub const PROB_CLAMP: f64 = 1e-7;

/// Binary cross-entropy with the probability clamped away from 0 and 1.
pub fn blockage_loss(prob: f64, label: bool) -> f64 {
    let p = prob.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Gradient of [`blockage_loss`] of `sigmoid(z)` with respect to `z`; zero
/// where the clamp is active.
pub fn blockage_loss_grad(z: f64, label: bool) -> f64 {
    let p = sigmoid(z);
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
        return 0.0;
    }
    p - if label { 1.0 } else { 0.0 }
}
