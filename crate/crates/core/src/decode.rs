//! Iterative parallel decoding.
//!
//! Starting from the masked cells `U0` (N of them), each of K iterations runs
//! the model on the current grid, samples every still-masked cell at the
//! requested temperature, scores each sample by its probability plus annealed
//! Gumbel noise, and commits the most confident ones so that exactly
//! `ceil(cos(pi k / 2K) * N)` cells stay masked after iteration k. Locked and
//! pre-set cells are context and never change.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{forward, Grid, ModelConfig, Prediction, Weights, ZERO_GRID};
use crate::pattern::{Cell, DrumPattern, MaskedPattern, INSTRUMENTS, STEPS};
use crate::rng;

pub const DEFAULT_ITERATIONS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub initial: MaskedPattern,
    pub temperature: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Add temperature-scaled Gumbel noise to confidences.
    pub confidence_noise: bool,
}

impl GenerationRequest {
    pub fn new(initial: MaskedPattern, seed: u64) -> Self {
        GenerationRequest { initial, temperature: 1.0, iterations: DEFAULT_ITERATIONS, seed, confidence_noise: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Request(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.iterations < 1 {
            return Err(Error::Request(format!("iterations must be at least 1, got {}", self.iterations)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStep {
    /// Masked cells remaining after this iteration.
    pub masked_after: usize,
    /// Cells committed this iteration, `(instrument, step)`.
    pub committed: Vec<(usize, usize)>,
    /// Confidence (with noise) of each committed cell, same order.
    pub confidences: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeTrace {
    pub initial_masked: usize,
    pub steps: Vec<DecodeStep>,
}

impl DecodeTrace {
    pub fn masked_counts(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.masked_after).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub pattern: DrumPattern,
    /// Probability of the emitted value per cell.
    pub confidence: Grid,
    pub trace: DecodeTrace,
}

/// Masked counts after each of `iterations` steps for `n` initially masked cells.
pub fn schedule_counts(n: usize, iterations: usize) -> Vec<usize> {
    (1..=iterations).map(|k| math::masked_count(k as f64 / iterations as f64, n)).collect()
}

/// `sigmoid(logit / temperature)`.
pub fn temperature_apply(logit: f64, temperature: f64) -> Result<f64> {
    if !(temperature > 0.0) {
        return Err(Error::Request(format!("temperature must be positive, got {temperature}")));
    }
    Ok(math::sigmoid(logit / temperature))
}

pub fn decode(cfg: &ModelConfig, weights: &Weights, req: &GenerationRequest) -> Result<Generation> {
    decode_with(|mp| forward(cfg, weights, mp), req)
}

/// Decoder over any predictor; `decode` plugs in the transformer.
pub fn decode_with<F>(mut predict: F, req: &GenerationRequest) -> Result<Generation>
where
    F: FnMut(&MaskedPattern) -> Prediction,
{
    req.validate()?;
    let mut rng = rng::seeded(req.seed);
    let mut current = req.initial;
    let n = current.masked_count();
    let k_total = req.iterations;
    let mut confidence = ZERO_GRID;
    let mut committed_mask = [0u32; INSTRUMENTS];
    let mut steps = Vec::with_capacity(k_total);
    let mut last: Option<Prediction> = None;

    if n > 0 {
        for k in 1..=k_total {
            let pred = predict(&current);
            let noise_scale =
                if req.confidence_noise { req.temperature * (1.0 - k as f64 / k_total as f64) } else { 0.0 };
            // (score, index, value, probability of value)
            let mut candidates: Vec<(f64, usize, bool, f64)> = Vec::with_capacity(current.masked_count());
            for i in 0..INSTRUMENTS {
                for t in 0..STEPS {
                    if !current.is_masked(i, t) {
                        continue;
                    }
                    let p = math::sigmoid(pred.logits[i][t] / req.temperature);
                    let hit = rng::bernoulli(&mut rng, p);
                    let prob = if hit { p } else { 1.0 - p };
                    let score = if noise_scale > 0.0 { prob + noise_scale * rng::gumbel(&mut rng) } else { prob };
                    candidates.push((score, i * STEPS + t, hit, prob));
                }
            }
            let target = math::masked_count(k as f64 / k_total as f64, n);
            let commit = candidates.len().saturating_sub(target);
            candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut step = DecodeStep { masked_after: 0, committed: Vec::with_capacity(commit), confidences: Vec::with_capacity(commit) };
            for &(score, idx, hit, prob) in candidates.iter().take(commit) {
                let (i, t) = (idx / STEPS, idx % STEPS);
                current.set_cell(i, t, if hit { Cell::Hit } else { Cell::Silent })?;
                confidence[i][t] = prob;
                committed_mask[i] |= 1 << t;
                step.committed.push((i, t));
                step.confidences.push(score);
            }
            step.masked_after = current.masked_count();
            steps.push(step);
            last = Some(pred);
        }
    }

    let pattern = current.known();
    let last = match last {
        Some(p) => p,
        None => predict(&current),
    };
    for i in 0..INSTRUMENTS {
        for t in 0..STEPS {
            if committed_mask[i] >> t & 1 == 0 {
                let p = math::sigmoid(last.logits[i][t] / req.temperature);
                confidence[i][t] = if pattern.get(i, t) { p } else { 1.0 - p };
            }
        }
    }
    debug_assert_eq!(current.masked_count(), 0);
    Ok(Generation { pattern, confidence, trace: DecodeTrace { initial_masked: n, steps } })
}
