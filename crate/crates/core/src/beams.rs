//! DFT codebook, achievable rate, exhaustive beam search and the Top-G
//! metrics (accuracy and transmission rate ratio).

use crate::channel::ChannelMatrix;
use num_complex::Complex64;
use std::f64::consts::PI;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BeamError {
    #[error("codebook needs at least one antenna and one beam")]
    EmptyCodebook,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("top-G set {index} has {len} entries, expected {g}")]
    SetSize { index: usize, len: usize, g: usize },
    #[error("no sample has a positive optimal rate")]
    NoValidSamples,
}

/// `size` unit-norm beams over `antennas` elements, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub antennas: usize,
    pub size: usize,
    pub vectors: Vec<Complex64>,
}

impl Codebook {
    pub fn beam(&self, m: usize) -> &[Complex64] {
        &self.vectors[m * self.antennas..(m + 1) * self.antennas]
    }
}

/// Beam `m`, entry `n` is `exp(-j 2 pi m n / M) / sqrt(N)`. The negative
/// exponent makes beam `m` match a steering vector whose direction cosine
/// sits on grid point `m` under the unconjugated product `h^T w`.
pub fn dft_codebook(antennas: usize, size: usize) -> Result<Codebook, BeamError> {
    if antennas == 0 || size == 0 {
        return Err(BeamError::EmptyCodebook);
    }
    let scale = 1.0 / (antennas as f64).sqrt();
    let mut vectors = Vec::with_capacity(antennas * size);
    for m in 0..size {
        for n in 0..antennas {
            // reduce m*n first so the angle stays small and exact
            let idx = (m * n) % size;
            let theta = -2.0 * PI * idx as f64 / size as f64;
            vectors.push(Complex64::from_polar(scale, theta));
        }
    }
    Ok(Codebook { antennas, size, vectors })
}

fn dot(h: &[Complex64], w: &[Complex64]) -> Complex64 {
    h.iter().zip(w).map(|(a, b)| a * b).sum()
}

fn log2_1p(x: f64) -> f64 {
    x.ln_1p() / std::f64::consts::LN_2
}

/// Spectral efficiency of beam `w` averaged over subcarriers, in bits/s/Hz.
pub fn rate(channel: &ChannelMatrix, w: &[Complex64], tx_power: f64, noise_power: f64) -> Result<f64, BeamError> {
    if w.len() != channel.antennas {
        return Err(BeamError::Dimension { expected: channel.antennas, got: w.len() });
    }
    let snr = tx_power / noise_power;
    let total: f64 = (0..channel.subcarriers).map(|k| log2_1p(snr * dot(channel.row(k), w).norm_sqr())).sum();
    Ok(total / channel.subcarriers as f64)
}

/// Per-beam rates of one channel and the index of the best beam.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamEvaluation {
    pub rates: Vec<f64>,
    pub optimal_index: usize,
}

impl BeamEvaluation {
    pub fn optimal_rate(&self) -> f64 {
        self.rates[self.optimal_index]
    }

    pub fn topg(&self, g: usize) -> Vec<usize> {
        topg_indices(&self.rates, g)
    }
}

/// Indices of the `g` largest scores, best first; ties go to the smaller
/// index.
pub fn topg_indices(scores: &[f64], g: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(g);
    idx
}

/// Index of the largest score, smallest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    best
}

/// Exhaustive search over the codebook.
pub fn optimal_beam(
    channel: &ChannelMatrix,
    codebook: &Codebook,
    tx_power: f64,
    noise_power: f64,
) -> Result<BeamEvaluation, BeamError> {
    if codebook.size == 0 {
        return Err(BeamError::EmptyCodebook);
    }
    let rates = (0..codebook.size)
        .map(|m| rate(channel, codebook.beam(m), tx_power, noise_power))
        .collect::<Result<Vec<_>, _>>()?;
    let optimal_index = argmax(&rates);
    Ok(BeamEvaluation { rates, optimal_index })
}

/// Fraction of samples whose label lies in its Top-G set.
pub fn topg_accuracy(labels: &[usize], sets: &[Vec<usize>], g: usize) -> Result<f64, BeamError> {
    if labels.len() != sets.len() {
        return Err(BeamError::Dimension { expected: labels.len(), got: sets.len() });
    }
    if labels.is_empty() {
        return Err(BeamError::NoValidSamples);
    }
    let mut hits = 0usize;
    for (i, (l, s)) in labels.iter().zip(sets).enumerate() {
        if s.len() != g {
            return Err(BeamError::SetSize { index: i, len: s.len(), g });
        }
        if s.contains(l) {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrrResult {
    pub value: f64,
    pub valid: usize,
    /// Samples dropped because their optimal rate is zero.
    pub invalid: usize,
}

/// Mean over samples of the best rate inside the Top-G set divided by the
/// exhaustive optimum.
pub fn trr_from_rates(rates: &[Vec<f64>], sets: &[Vec<usize>], g: usize) -> Result<TrrResult, BeamError> {
    if rates.len() != sets.len() {
        return Err(BeamError::Dimension { expected: rates.len(), got: sets.len() });
    }
    let mut sum = 0.0;
    let mut valid = 0usize;
    let mut invalid = 0usize;
    for (i, (r, s)) in rates.iter().zip(sets).enumerate() {
        if s.len() != g {
            return Err(BeamError::SetSize { index: i, len: s.len(), g });
        }
        let best = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(best > 0.0) {
            invalid += 1;
            continue;
        }
        let within = s.iter().map(|&m| r[m]).fold(f64::NEG_INFINITY, f64::max);
        sum += within / best;
        valid += 1;
    }
    if invalid > 0 {
        log::warn!("TRR: {invalid} samples with zero optimal rate excluded");
    }
    if valid == 0 {
        return Err(BeamError::NoValidSamples);
    }
    Ok(TrrResult { value: sum / valid as f64, valid, invalid })
}

pub fn trr(
    channels: &[ChannelMatrix],
    codebook: &Codebook,
    sets: &[Vec<usize>],
    g: usize,
    tx_power: f64,
    noise_power: f64,
) -> Result<TrrResult, BeamError> {
    let rates = channels
        .iter()
        .map(|h| optimal_beam(h, codebook, tx_power, noise_power).map(|e| e.rates))
        .collect::<Result<Vec<_>, _>>()?;
    trr_from_rates(&rates, sets, g)
}
