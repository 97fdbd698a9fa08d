//! Set-level metrics, novelty against the training corpus, and the loss ablation.

use alloc::vec::Vec;

use crate::decode::{decode, GenerationRequest};
use crate::error::{Error, Result};
use crate::math;
use crate::metrics::{self, PatternMetrics};
use crate::model::{LossConfig, LossMix};
use crate::model::ModelConfig;
use crate::pattern::{DrumPattern, Instrument, LoopRecord, MaskedPattern, STEPS};
use crate::rng;
use crate::train::{train, TrainConfig, TrainOutcome};

pub const NOVELTY_BINS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetMetrics {
    pub n: usize,
    pub mean: PatternMetrics,
    /// Standard error of the mean (sample standard deviation / sqrt(n)).
    pub stderr: PatternMetrics,
}

fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, math::sqrt(var / n))
}

pub fn evaluate_set(patterns: &[DrumPattern]) -> Result<SetMetrics> {
    if patterns.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per: Vec<PatternMetrics> = patterns.iter().map(PatternMetrics::of).collect();
    let col = |f: fn(&PatternMetrics) -> f64| mean_stderr(&per.iter().map(f).collect::<Vec<_>>());
    let (bs, bs_e) = col(|m| m.beat_strength);
    let (pr, pr_e) = col(|m| m.pattern_repetition);
    let (ib, ib_e) = col(|m| m.instrument_balance);
    Ok(SetMetrics {
        n: patterns.len(),
        mean: PatternMetrics { beat_strength: bs, pattern_repetition: pr, instrument_balance: ib },
        stderr: PatternMetrics { beat_strength: bs_e, pattern_repetition: pr_e, instrument_balance: ib_e },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoveltyReport {
    /// Per generated loop, IoU with its nearest training loop.
    pub nearest: Vec<f64>,
    pub max: f64,
    pub median: f64,
    /// Counts of `nearest` over [0, 1] in equal bins; 1.0 lands in the last bin.
    pub histogram: [usize; NOVELTY_BINS],
}

impl NoveltyReport {
    pub fn count_at_least(&self, threshold: f64) -> usize {
        self.nearest.iter().filter(|&&x| x >= threshold).count()
    }
}

pub fn nearest_iou(p: &DrumPattern, corpus: &[DrumPattern]) -> f64 {
    corpus.iter().map(|q| metrics::iou(p, q)).fold(0.0, f64::max)
}

pub fn novelty_report(generated: &[DrumPattern], training: &[DrumPattern]) -> Result<NoveltyReport> {
    if generated.is_empty() || training.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let nearest: Vec<f64> = generated.iter().map(|p| nearest_iou(p, training)).collect();
    let mut sorted = nearest.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0 };
    let mut histogram = [0usize; NOVELTY_BINS];
    for &x in &nearest {
        let bin = ((x * NOVELTY_BINS as f64) as usize).min(NOVELTY_BINS - 1);
        histogram[bin] += 1;
    }
    Ok(NoveltyReport { max: sorted[n - 1], median, nearest, histogram })
}

/// Fraction of steps (over all loops) where closed and open hi-hat both sound.
pub fn hihat_coactivation_rate(patterns: &[DrumPattern]) -> f64 {
    if patterns.is_empty() {
        return 0.0;
    }
    let both: u32 = patterns
        .iter()
        .map(|p| (p.row(Instrument::ClosedHiHat.index()) & p.row(Instrument::OpenHiHat.index())).count_ones())
        .sum();
    f64::from(both) / (patterns.len() * STEPS) as f64
}

/// Loss-ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Focal loss only.
    Mg,
    /// Focal plus groove loss.
    Gl,
    /// Focal plus dependency loss.
    Dl,
    /// Focal, groove and dependency losses.
    GlDl,
    /// All losses plus the per-instrument masking curriculum.
    MaskBeat,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Mg, Variant::Gl, Variant::Dl, Variant::GlDl, Variant::MaskBeat];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Mg => "mg",
            Variant::Gl => "gl",
            Variant::Dl => "dl",
            Variant::GlDl => "gldl",
            Variant::MaskBeat => "maskbeat",
        }
    }

    pub fn from_name(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    /// `base` with the loss families this variant leaves out set to zero weight.
    pub fn loss_config(self, base: &LossConfig) -> LossConfig {
        let m = base.mix;
        let (dep, groove) = match self {
            Variant::Mg => (false, false),
            Variant::Gl => (false, true),
            Variant::Dl => (true, false),
            Variant::GlDl | Variant::MaskBeat => (true, true),
        };
        LossConfig {
            mix: LossMix {
                focal: m.focal,
                dependency: if dep { m.dependency } else { 0.0 },
                groove: if groove { m.groove } else { 0.0 },
            },
            ..base.clone()
        }
    }

    pub fn train_config(self, base: &TrainConfig) -> TrainConfig {
        TrainConfig { timestep_only: self != Variant::MaskBeat, ..base.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantResult {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: TrainOutcome,
    pub generated: Vec<DrumPattern>,
    pub metrics: SetMetrics,
    pub hihat_coactivation: f64,
}

/// Unconditional generation from a fully masked grid.
pub fn generate_unconditional(
    model: &ModelConfig,
    outcome: &TrainOutcome,
    n: usize,
    seed: u64,
    iterations: usize,
    temperature: f64,
) -> Result<Vec<DrumPattern>> {
    (0..n)
        .map(|j| {
            let req = GenerationRequest {
                temperature,
                iterations,
                ..GenerationRequest::new(MaskedPattern::fully_masked(), rng::derive_seed(seed, 1000 + j as u64))
            };
            decode(model, &outcome.weights, &req).map(|g| g.pattern)
        })
        .collect()
}

/// Train one variant with one seed and generate `n_generate` loops.
pub fn run_variant(
    records: &[LoopRecord],
    variant: Variant,
    seed: u64,
    model: &ModelConfig,
    loss: &LossConfig,
    base: &TrainConfig,
    n_generate: usize,
) -> Result<VariantResult> {
    let tc = TrainConfig { seed, ..variant.train_config(base) };
    let outcome = train(records, model, &variant.loss_config(loss), &tc, |_| {})?;
    let generated = generate_unconditional(model, &outcome, n_generate, seed, 10, 1.0)?;
    let metrics = evaluate_set(&generated)?;
    let hihat_coactivation = hihat_coactivation_rate(&generated);
    Ok(VariantResult { variant, seed, outcome, generated, metrics, hihat_coactivation })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_metrics_mean_and_stderr() {
        let rock = DrumPattern::from_fn(|i, t| (i == 0 && t % 8 == 0) || (i == 1 && t % 8 == 4));
        let m = evaluate_set(&[rock, rock]).unwrap();
        assert_eq!(m.n, 2);
        assert_eq!(m.mean.beat_strength, 0.5);
        assert_eq!(m.stderr.beat_strength, 0.0);
        assert!(evaluate_set(&[]).is_err());
    }

    #[test]
    fn novelty_histogram() {
        let a = DrumPattern::from_fn(|i, t| i == 0 && t % 4 == 0);
        let b = DrumPattern::from_fn(|i, t| i == 1 && t % 4 == 0);
        let r = novelty_report(&[a, b], &[a]).unwrap();
        assert_eq!(r.nearest, [1.0, 0.0]);
        assert_eq!(r.max, 1.0);
        assert_eq!(r.median, 0.5);
        assert_eq!(r.histogram[0], 1);
        assert_eq!(r.histogram[NOVELTY_BINS - 1], 1);
        assert_eq!(r.count_at_least(0.95), 1);
    }

    #[test]
    fn coactivation() {
        let p = DrumPattern::from_fn(|i, t| (i == 2 || i == 3) && t < 4);
        assert_eq!(hihat_coactivation_rate(&[p, DrumPattern::empty()]), 4.0 / 64.0);
    }

    #[test]
    fn variants_zero_the_right_terms() {
        let base = LossConfig::default();
        let mg = Variant::Mg.loss_config(&base).mix;
        assert_eq!((mg.dependency, mg.groove), (0.0, 0.0));
        let dl = Variant::Dl.loss_config(&base).mix;
        assert!(dl.dependency > 0.0 && dl.groove == 0.0);
        assert!(Variant::GlDl.train_config(&TrainConfig::default()).timestep_only);
        assert!(!Variant::MaskBeat.train_config(&TrainConfig::default()).timestep_only);
        assert_eq!(Variant::from_name("gldl"), Some(Variant::GlDl));
    }
}
