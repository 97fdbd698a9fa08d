//! Masked-modeling training loop.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{backward, forward, forward_with_cache, grad_to_logits, total_loss, total_loss_grad, LossBreakdown, LossConfig};
use crate::model::{ModelConfig, Weights, ZERO_GRID};
use crate::pattern::{Cell, DrumPattern, LoopRecord, MaskedPattern, CELLS, INSTRUMENTS, STEPS};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Whole steps (all nine instruments) are hidden.
    Timestep,
    /// Individual cells are hidden.
    Instrument,
}

/// How masks are drawn over training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskSchedule {
    pub epochs: usize,
    /// Instrument-level masking probability reached at the last epoch.
    pub final_instrument_prob: f64,
    /// Never use instrument-level masks.
    pub timestep_only: bool,
}

impl MaskSchedule {
    /// Probability of an instrument-level mask at 0-based `epoch`, ramping
    /// linearly from 0 to `final_instrument_prob`.
    pub fn instrument_mask_prob(&self, epoch: usize) -> f64 {
        if self.timestep_only || self.epochs <= 1 {
            return if self.timestep_only { 0.0 } else { self.final_instrument_prob };
        }
        let frac = (epoch.min(self.epochs - 1)) as f64 / (self.epochs - 1) as f64;
        self.final_instrument_prob * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSample {
    pub input: MaskedPattern,
    pub target: DrumPattern,
    /// Bit set = masked (and scored by the focal term).
    pub mask: [u32; INSTRUMENTS],
    pub mode: MaskMode,
    pub ratio: f64,
}

/// Mask `ceil(cos(pi r / 2) * units)` units (at least one) chosen uniformly.
pub fn mask_with<R: Rng + ?Sized>(p: &DrumPattern, mode: MaskMode, r: f64, rng: &mut R) -> MaskSample {
    let units = match mode {
        MaskMode::Timestep => STEPS,
        MaskMode::Instrument => CELLS,
    };
    let count = math::masked_count(r, units).clamp(1, units);
    let mut order: Vec<usize> = (0..units).collect();
    let (chosen, _) = order.partial_shuffle(rng, count);
    let mut mask = [0u32; INSTRUMENTS];
    for &u in chosen.iter() {
        match mode {
            MaskMode::Timestep => {
                for row in mask.iter_mut() {
                    *row |= 1 << u;
                }
            }
            MaskMode::Instrument => mask[u / STEPS] |= 1 << (u % STEPS),
        }
    }
    let mut input = MaskedPattern::from_pattern(p);
    for i in 0..INSTRUMENTS {
        for t in 0..STEPS {
            if mask[i] >> t & 1 == 1 {
                // from_pattern never locks, so masking cannot fail
                let _ = input.set_cell(i, t, Cell::Masked);
            }
        }
    }
    MaskSample { input, target: *p, mask, mode, ratio: r }
}

/// Draw `r ~ U(0, 1]` and a mode from the schedule, then mask.
pub fn sample_mask<R: Rng + ?Sized>(p: &DrumPattern, epoch: usize, schedule: &MaskSchedule, rng: &mut R) -> MaskSample {
    let r = 1.0 - rng.gen::<f64>();
    let mode =
        if rng.gen::<f64>() < schedule.instrument_mask_prob(epoch) { MaskMode::Instrument } else { MaskMode::Timestep };
    mask_with(p, mode, r, rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub grad_clip: f64,
    pub final_instrument_mask_prob: f64,
    pub timestep_only: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            final_instrument_mask_prob: 0.5,
            timestep_only: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config(String::from("batch_size must be at least 1")));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(String::from("Adam betas must lie in [0, 1)")));
        }
        if !(0.0..=1.0).contains(&self.final_instrument_mask_prob) {
            return Err(Error::Config(String::from("instrument mask probability must lie in [0, 1]")));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config(String::from("grad_clip must be positive")));
        }
        Ok(())
    }

    pub fn schedule(&self) -> MaskSchedule {
        MaskSchedule {
            epochs: self.epochs,
            final_instrument_prob: self.final_instrument_mask_prob,
            timestep_only: self.timestep_only,
        }
    }
}

/// Roughly 10% of sources go to validation, keyed on the source id so that
/// augmented copies of one loop stay together.
pub fn is_validation(source_id: &str) -> bool {
    rng::fnv1a(source_id.as_bytes()).is_multiple_of(10)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<DrumPattern>,
    pub validation: Vec<DrumPattern>,
    /// Set when one side came out empty and the other was reused.
    pub fallback: bool,
}

pub fn split_dataset(records: &[LoopRecord]) -> Result<Split> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (val, train): (Vec<&LoopRecord>, Vec<&LoopRecord>) = records.iter().partition(|r| is_validation(&r.source_id));
    let mut split = Split {
        train: train.iter().map(|r| r.pattern).collect(),
        validation: val.iter().map(|r| r.pattern).collect(),
        fallback: false,
    };
    if split.validation.is_empty() {
        split.validation = split.train.clone();
        split.fallback = true;
    } else if split.train.is_empty() {
        split.train = split.validation.clone();
        split.fallback = true;
    }
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 0 is the untrained model.
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss.
    pub weights: Weights,
    pub best_epoch: usize,
    pub curve: Vec<EpochStats>,
    pub fallback_split: bool,
}

impl TrainOutcome {
    pub fn curve_csv(&self) -> String {
        let mut s = String::from("epoch,train,val,focal,dep,groove\n");
        for e in &self.curve {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                e.epoch, e.train.total, e.val.total, e.val.focal, e.val.dependency, e.val.groove
            ));
        }
        s
    }
}

/// Fixed masks for evaluating a split the same way every epoch.
fn fixed_masks(patterns: &[DrumPattern], schedule: &MaskSchedule, seed: u64) -> Vec<MaskSample> {
    let mut rng = rng::seeded(seed);
    let last = schedule.epochs.saturating_sub(1);
    patterns.iter().map(|p| sample_mask(p, last, schedule, &mut rng)).collect()
}

/// Mean loss of `weights` over pre-drawn masks, without dropout.
pub fn evaluate_loss(cfg: &ModelConfig, weights: &Weights, loss: &LossConfig, samples: &[MaskSample]) -> LossBreakdown {
    let mut acc = LossBreakdown::default();
    if samples.is_empty() {
        return acc;
    }
    for s in samples {
        let pred = forward(cfg, weights, &s.input);
        let b = total_loss(&pred.probs, &s.target, &s.mask, loss);
        acc.focal += b.focal;
        acc.dependency += b.dependency;
        acc.groove += b.groove;
        acc.total += b.total;
    }
    let n = samples.len() as f64;
    LossBreakdown { focal: acc.focal / n, dependency: acc.dependency / n, groove: acc.groove / n, total: acc.total / n }
}

struct Adam {
    m: Weights,
    v: Weights,
    b1t: f64,
    b2t: f64,
}

impl Adam {
    fn new(cfg: &ModelConfig) -> Self {
        Adam { m: Weights::zeros(cfg), v: Weights::zeros(cfg), b1t: 1.0, b2t: 1.0 }
    }

    fn step(&mut self, w: &mut Weights, g: &Weights, tc: &TrainConfig) {
        self.b1t *= tc.beta1;
        self.b2t *= tc.beta2;
        let c1 = 1.0 - self.b1t;
        let c2 = 1.0 - self.b2t;
        let lr = tc.learning_rate;
        for (((w, g), m), v) in
            w.tensors_mut().into_iter().zip(g.tensors()).zip(self.m.tensors_mut()).zip(self.v.tensors_mut())
        {
            for k in 0..w.len() {
                m[k] = tc.beta1 * m[k] + (1.0 - tc.beta1) * g[k];
                v[k] = tc.beta2 * v[k] + (1.0 - tc.beta2) * g[k] * g[k];
                w[k] -= lr * (m[k] / c1) / (math::sqrt(v[k] / c2) + tc.adam_eps);
            }
        }
    }
}

/// Train from scratch. `on_epoch` sees each row of the loss curve as it is produced.
pub fn train(
    records: &[LoopRecord],
    model: &ModelConfig,
    loss: &LossConfig,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    model.validate()?;
    loss.validate()?;
    tc.validate()?;
    let split = split_dataset(records)?;
    let schedule = tc.schedule();
    let train_eval = fixed_masks(&split.train, &schedule, rng::derive_seed(tc.seed, 2));
    let val_eval = fixed_masks(&split.validation, &schedule, rng::derive_seed(tc.seed, 3));

    let mut weights = Weights::init(model, rng::derive_seed(tc.seed, 1))?;
    let mut grad = Weights::zeros(model);
    let mut adam = Adam::new(model);
    let mut rng = rng::seeded(rng::derive_seed(tc.seed, 4));

    let evaluate = |w: &Weights, epoch: usize| EpochStats {
        epoch,
        train: evaluate_loss(model, w, loss, &train_eval),
        val: evaluate_loss(model, w, loss, &val_eval),
    };
    let first = evaluate(&weights, 0);
    on_epoch(&first);
    let mut best = (first.val.total, 0, weights.clone());
    let mut curve = alloc::vec![first];

    let mut order: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            grad.fill(0.0);
            let mut batch_loss = 0.0f64;
            for &idx in chunk {
                let sample = sample_mask(&split.train[idx], epoch - 1, &schedule, &mut rng);
                let (pred, cache) = forward_with_cache(model, &weights, &sample.input, Some(&mut rng));
                let mut dy = ZERO_GRID;
                let parts = total_loss_grad(&pred.probs, &sample.target, &sample.mask, loss, &mut dy);
                batch_loss += parts.total;
                let dlogits = grad_to_logits(&dy, &pred.probs);
                backward(model, &weights, &cache, &dlogits, &mut grad);
            }
            grad.scale(1.0 / chunk.len() as f64);
            let norm = math::sqrt(grad.norm_sq());
            if !batch_loss.is_finite() || !norm.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b, grad_norm: norm });
            }
            if norm > tc.grad_clip {
                grad.scale(tc.grad_clip / norm);
            }
            adam.step(&mut weights, &grad, tc);
        }
        let stats = evaluate(&weights, epoch);
        on_epoch(&stats);
        if stats.val.total < best.0 {
            best = (stats.val.total, epoch, weights.clone());
        }
        curve.push(stats);
    }
    Ok(TrainOutcome { weights: best.2, best_epoch: best.1, curve, fallback_split: split.fallback })
}
