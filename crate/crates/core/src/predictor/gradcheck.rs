//! Central finite-difference check of the analytic gradients in f64.

use super::layers::Mode;
use super::network::Network;
use super::tensor::Act;
use super::train::loss_and_grad;
use super::PredictorError;
use crate::rng;
use rand::Rng;

pub const STEP: f64 = 1e-5;
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries redrawn because a perturbation flipped some ReLU.
    pub skipped_at_kinks: usize,
    /// (tensor name, index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

fn loss(
    net: &mut Network<f64>,
    loc: &Act<f64>,
    masks: &Act<f64>,
    labels: &[usize],
    mode: Mode,
) -> Result<(f64, Vec<bool>), PredictorError> {
    let (out, cache) = net.forward(loc, masks, mode, None)?;
    Ok((loss_and_grad(net.head_kind, &out, labels).0, cache.relu_pattern()))
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Compares backpropagated gradients of the mean batch loss against
/// central differences on `count` trainable entries: one per tensor first,
/// the rest drawn at random. An entry whose perturbation changes the ReLU
/// activation pattern straddles a kink, where the difference quotient is
/// meaningless; it is replaced by a fresh draw. `mode` must not be
/// [`Mode::Train`], so that the loss is a deterministic function of the
/// parameters.
pub fn gradient_check(
    net: &Network<f64>,
    loc: &Act<f64>,
    masks: &Act<f64>,
    labels: &[usize],
    mode: Mode,
    count: usize,
    seed: u64,
) -> Result<GradCheck, PredictorError> {
    if mode == Mode::Train {
        return Err(PredictorError::Config("gradient check needs a deterministic mode".into()));
    }
    let mut net = net.clone();
    let (out, cache) = net.forward(loc, masks, mode, None)?;
    let (_, g) = loss_and_grad(net.head_kind, &out, labels);
    let pattern = cache.relu_pattern();
    net.zero_grad();
    net.backward(&cache, &g);
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.clone()).collect();
    let sizes: Vec<(usize, bool)> = net.params().iter().map(|p| (p.value.len(), p.trainable)).collect();
    let trainable: Vec<usize> = (0..sizes.len()).filter(|&i| sizes[i].1).collect();

    let mut s = rng::stream(seed, "gradcheck");
    let total: usize = trainable.iter().map(|&t| sizes[t].0).sum();
    let queue: Vec<(usize, usize)> = trainable.iter().map(|&t| (t, s.random_range(0..sizes[t].0))).collect();
    let mut tried = std::collections::BTreeSet::new();
    let mut result = GradCheck { max_rel_error: 0.0, checked: 0, skipped_at_kinks: 0, worst: None };
    let target = count.min(total);
    let mut next = 0;
    while result.checked < target && tried.len() < total {
        let (t, k) = if next < queue.len() {
            next += 1;
            queue[next - 1]
        } else {
            let mut k = s.random_range(0..total);
            let mut t = trainable[0];
            for &ti in &trainable {
                if k < sizes[ti].0 {
                    t = ti;
                    break;
                }
                k -= sizes[ti].0;
            }
            (t, k)
        };
        if !tried.insert((t, k)) {
            continue;
        }
        let orig = net.params()[t].value[k];
        net.params_mut()[t].value[k] = orig + STEP;
        let (up, pu) = loss(&mut net, loc, masks, labels, mode)?;
        net.params_mut()[t].value[k] = orig - STEP;
        let (down, pd) = loss(&mut net, loc, masks, labels, mode)?;
        net.params_mut()[t].value[k] = orig;
        if pu != pattern || pd != pattern {
            result.skipped_at_kinks += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * STEP);
        let err = relative_error(analytic[t][k], numeric);
        result.checked += 1;
        if err >= result.max_rel_error {
            result.max_rel_error = err;
            result.worst = Some((net.params()[t].name.clone(), k, analytic[t][k], numeric));
        }
    }
    Ok(result)
}
