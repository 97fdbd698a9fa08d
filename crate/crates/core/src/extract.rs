//! Loop mining: periodicity detection on the downmixed onset vector, 32-step
//! window extraction, quality filters, near-duplicate removal and
//! augmentation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::metrics::iou;
use crate::midi::QuantizedTrack;
use crate::pattern::{DrumPattern, LoopRecord, BAR_STEPS, CELLS, INSTRUMENTS, STEPS};
use crate::rng;

pub const MIN_LAG: usize = 16;
pub const MAX_LAG: usize = 64;
/// Shortest track for which every searched lag overlaps at least 16 steps.
pub const MIN_TRACK_STEPS: usize = MAX_LAG + 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionConfig {
    pub threshold: f64,
    pub min_lag: usize,
    pub max_lag: usize,
    pub min_hits: usize,
    pub max_density: f64,
    pub min_density: f64,
    pub dedup_similarity: f64,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            threshold: 0.8,
            min_lag: MIN_LAG,
            max_lag: MAX_LAG,
            min_hits: 6,
            max_density: 0.40,
            min_density: 0.05,
            dedup_similarity: 0.85,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!("threshold {} outside (0, 1]", self.threshold)));
        }
        if !(0.0 < self.min_density && self.min_density < self.max_density && self.max_density <= 1.0) {
            return Err(Error::Config(format!(
                "density bounds must satisfy 0 < min ({}) < max ({}) <= 1",
                self.min_density, self.max_density
            )));
        }
        if self.min_lag == 0 || self.min_lag > self.max_lag {
            return Err(Error::Config(format!("lag range [{}, {}] is empty", self.min_lag, self.max_lag)));
        }
        if !(0.0..=1.0).contains(&self.dedup_similarity) {
            return Err(Error::Config(format!("dedup similarity {} outside [0, 1]", self.dedup_similarity)));
        }
        Ok(())
    }

    /// Hit-count and density filters applied to every emitted loop.
    pub fn check_quality(&self, p: &DrumPattern) -> core::result::Result<(), Rejection> {
        let hits = p.hit_count();
        let density = p.density();
        if density >= self.max_density {
            Err(Rejection::TooDense)
        } else if hits < self.min_hits {
            Err(Rejection::TooFewHits)
        } else if density < self.min_density {
            Err(Rejection::TooSparse)
        } else {
            Ok(())
        }
    }
}

/// Why a track produced no loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rejection {
    NoPeriod,
    TooSparse,
    TooDense,
    TooFewHits,
    WindowOutOfRange,
}

impl Rejection {
    pub const ALL: [Rejection; 5] =
        [Rejection::NoPeriod, Rejection::TooSparse, Rejection::TooDense, Rejection::TooFewHits, Rejection::WindowOutOfRange];

    pub fn name(self) -> &'static str {
        match self {
            Rejection::NoPeriod => "no_period",
            Rejection::TooSparse => "too_sparse",
            Rejection::TooDense => "too_dense",
            Rejection::TooFewHits => "too_few_hits",
            Rejection::WindowOutOfRange => "window_out_of_range",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicityProfile {
    pub min_lag: usize,
    /// `phi[k]` is the score at lag `min_lag + k`.
    pub phi: Vec<f64>,
    pub best_period: Option<usize>,
    pub best_phase: Option<usize>,
    /// `phi(best_period)`, or 0 when no period was accepted.
    pub score: f64,
}

impl PeriodicityProfile {
    pub fn phi_at(&self, lag: usize) -> Option<f64> {
        lag.checked_sub(self.min_lag).and_then(|k| self.phi.get(k)).copied()
    }
}

/// Logical OR over instrument rows.
pub fn downmix(roll: &[Vec<bool>]) -> Vec<bool> {
    let steps = roll.first().map_or(0, Vec::len);
    (0..steps).map(|t| roll.iter().any(|row| row[t])).collect()
}

/// Lag-`tau` correlation normalized by the zero-lag sum over the same overlap:
/// `sum_{t < T - tau} a_t a_{t+tau} / sum_{t < T - tau} a_t`.
pub fn normalized_autocorrelation(a: &[bool], tau: usize) -> f64 {
    if tau >= a.len() {
        return 0.0;
    }
    let n = a.len() - tau;
    let (mut cross, mut zero) = (0usize, 0usize);
    for t in 0..n {
        if a[t] {
            zero += 1;
            if a[t + tau] {
                cross += 1;
            }
        }
    }
    if zero == 0 {
        0.0
    } else {
        cross as f64 / zero as f64
    }
}

/// Score every lag in the configured range and pick the shortest period above threshold.
pub fn autocorrelate(a: &[bool], cfg: &ExtractionConfig) -> Result<PeriodicityProfile> {
    let required = cfg.max_lag + 16;
    if a.len() < required {
        return Err(Error::TrackTooShort { steps: a.len(), required });
    }
    if !a.iter().any(|&x| x) {
        return Err(Error::EmptyTrack);
    }
    let phi: Vec<f64> = (cfg.min_lag..=cfg.max_lag).map(|tau| normalized_autocorrelation(a, tau)).collect();
    let best = phi.iter().position(|&v| v > cfg.threshold);
    let best_period = best.map(|k| cfg.min_lag + k);
    let score = best.map_or(0.0, |k| phi[k]);
    let best_phase = best_period.map(|period| best_window_start(a, period));
    Ok(PeriodicityProfile { min_lag: cfg.min_lag, phi, best_period, best_phase, score })
}

/// Window start in `[0, period)` with the most active steps in the
/// following 32 steps; earliest wins ties. Only starts whose window fits
/// inside the track are considered.
fn best_window_start(a: &[bool], period: usize) -> usize {
    let last = a.len().saturating_sub(STEPS);
    let mut best = (0usize, 0usize);
    for s in 0..period.min(last + 1) {
        let hits = a[s..s + STEPS].iter().filter(|&&x| x).count();
        if hits > best.1 {
            best = (s, hits);
        }
    }
    best.0
}

/// Cut the loop at the detected phase and apply the quality filters.
pub fn extract_loop(
    track: &QuantizedTrack,
    profile: &PeriodicityProfile,
    cfg: &ExtractionConfig,
    source_id: &str,
) -> core::result::Result<LoopRecord, Rejection> {
    let (Some(_), Some(phase)) = (profile.best_period, profile.best_phase) else {
        return Err(Rejection::NoPeriod);
    };
    let pattern = track.window(phase).ok_or(Rejection::WindowOutOfRange)?;
    cfg.check_quality(&pattern)?;
    Ok(LoopRecord {
        pattern,
        tempo_bpm: track.tempo_bpm,
        source_id: String::from(source_id),
        period_score: profile.score,
        genre_tag: None,
    })
}

/// Full detector on one quantized track: downmix, autocorrelate, extract.
pub fn mine_track(
    track: &QuantizedTrack,
    cfg: &ExtractionConfig,
    source_id: &str,
) -> Result<core::result::Result<LoopRecord, Rejection>> {
    let a = downmix(&track.roll);
    let profile = autocorrelate(&a, cfg)?;
    Ok(extract_loop(track, &profile, cfg, source_id))
}

/// Greedy first-wins near-duplicate removal: a record is dropped when its
/// IoU with any kept record reaches `similarity`.
pub fn deduplicate(records: Vec<LoopRecord>, similarity: f64) -> Vec<LoopRecord> {
    let mut kept: Vec<LoopRecord> = Vec::with_capacity(records.len());
    for r in records {
        if kept.iter().all(|k| iou(&k.pattern, &r.pattern) < similarity) {
            kept.push(r);
        }
    }
    kept
}

/// Per-instrument, per-step hit frequency of a corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    pub freq: [[f64; STEPS]; INSTRUMENTS],
}

impl FrequencyTable {
    pub fn from_patterns<'a, I: IntoIterator<Item = &'a DrumPattern>>(patterns: I) -> Self {
        let mut counts = [[0usize; STEPS]; INSTRUMENTS];
        let mut n = 0usize;
        for p in patterns {
            n += 1;
            for (i, t) in p.hits() {
                counts[i][t] += 1;
            }
        }
        let mut freq = [[0.0; STEPS]; INSTRUMENTS];
        if n > 0 {
            for i in 0..INSTRUMENTS {
                for t in 0..STEPS {
                    freq[i][t] = counts[i][t] as f64 / n as f64;
                }
            }
        }
        FrequencyTable { freq }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    None,
    Shift,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Circular shift amounts, each in 1..=16.
    pub shifts: Vec<usize>,
    /// Fraction of hits removed / added by density adjustment.
    pub density_fraction: f64,
    pub density: bool,
    pub stretch: bool,
}

impl AugmentConfig {
    pub fn for_mode(mode: AugmentMode) -> Option<Self> {
        match mode {
            AugmentMode::None => None,
            AugmentMode::Shift => {
                Some(AugmentConfig { shifts: (1..=16).collect(), density_fraction: 0.2, density: false, stretch: false })
            }
            AugmentMode::All => {
                Some(AugmentConfig { shifts: (1..=16).collect(), density_fraction: 0.2, density: true, stretch: true })
            }
        }
    }
}

/// Remove `floor(fraction * hits)` active cells chosen uniformly.
pub fn thin<R: Rng + ?Sized>(p: &DrumPattern, fraction: f64, rng: &mut R) -> DrumPattern {
    let mut hits: Vec<(usize, usize)> = p.hits().collect();
    let remove = crate::math::floor(fraction * hits.len() as f64) as usize;
    let mut out = *p;
    for _ in 0..remove {
        let k = rng.gen_range(0..hits.len());
        let (i, t) = hits.swap_remove(k);
        out.set(i, t, false);
    }
    out
}

/// Add up to `floor(fraction * hits)` cells sampled without replacement from
/// silent cells, weighted by the corpus frequency table.
pub fn thicken<R: Rng + ?Sized>(p: &DrumPattern, fraction: f64, table: &FrequencyTable, rng: &mut R) -> DrumPattern {
    let add = crate::math::floor(fraction * p.hit_count() as f64) as usize;
    let mut out = *p;
    let mut candidates: Vec<((usize, usize), f64)> = (0..INSTRUMENTS)
        .flat_map(|i| (0..STEPS).map(move |t| (i, t)))
        .filter(|&(i, t)| !p.get(i, t) && table.freq[i][t] > 0.0)
        .map(|(i, t)| ((i, t), table.freq[i][t]))
        .collect();
    for _ in 0..add {
        let total: f64 = candidates.iter().map(|c| c.1).sum();
        if candidates.is_empty() || total <= 0.0 {
            break;
        }
        let mut u = rng.gen::<f64>() * total;
        let mut pick = candidates.len() - 1;
        for (k, c) in candidates.iter().enumerate() {
            if u < c.1 {
                pick = k;
                break;
            }
            u -= c.1;
        }
        let ((i, t), _) = candidates.swap_remove(pick);
        out.set(i, t, true);
    }
    out
}

/// Stretch bar 1 over both bars (`t -> 2t`). Only expressible when both bars are equal.
pub fn half_time(p: &DrumPattern) -> Option<DrumPattern> {
    if p.bar(0) != p.bar(1) {
        return None;
    }
    Some(DrumPattern::from_fn(|i, t| t % 2 == 0 && p.get(i, t / 2)))
}

/// Compress to 16 steps (`t -> t/2`) and repeat. Requires every hit on an even step.
pub fn double_time(p: &DrumPattern) -> Option<DrumPattern> {
    const ODD: u32 = 0xAAAA_AAAA;
    if p.rows().iter().any(|r| r & ODD != 0) {
        return None;
    }
    Some(DrumPattern::from_fn(|i, t| p.get(i, 2 * (t % BAR_STEPS))))
}

/// Derived variants of one record; every survivor passes the quality filters.
pub fn augment(
    record: &LoopRecord,
    cfg: &AugmentConfig,
    quality: &ExtractionConfig,
    table: &FrequencyTable,
    seed: u64,
) -> Vec<LoopRecord> {
    let mut rng = rng::seeded(rng::derive_seed(seed, rng::fnv1a(record.source_id.as_bytes())));
    let mut variants: Vec<(String, DrumPattern)> = Vec::new();
    for &k in &cfg.shifts {
        if (1..=16).contains(&k) {
            variants.push((format!("shift{k}"), record.pattern.rotate(k)));
        }
    }
    if cfg.density {
        variants.push((String::from("thin"), thin(&record.pattern, cfg.density_fraction, &mut rng)));
        variants.push((String::from("thicken"), thicken(&record.pattern, cfg.density_fraction, table, &mut rng)));
    }
    if cfg.stretch {
        if let Some(p) = half_time(&record.pattern) {
            variants.push((String::from("half"), p));
        }
        if let Some(p) = double_time(&record.pattern) {
            variants.push((String::from("double"), p));
        }
    }
    variants
        .into_iter()
        .filter(|(_, p)| quality.check_quality(p).is_ok())
        .map(|(tag, pattern)| LoopRecord {
            pattern,
            tempo_bpm: record.tempo_bpm,
            source_id: format!("{}#{}", record.source_id, tag),
            period_score: record.period_score,
            genre_tag: record.genre_tag.clone(),
        })
        .collect()
}

/// Tally of extraction outcomes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExtractionTally {
    pub accepted: usize,
    pub rejected: [usize; 5],
}

impl ExtractionTally {
    pub fn record(&mut self, outcome: &core::result::Result<LoopRecord, Rejection>) {
        match outcome {
            Ok(_) => self.accepted += 1,
            Err(r) => self.rejected[Rejection::ALL.iter().position(|x| x == r).unwrap_or(0)] += 1,
        }
    }

    pub fn rejected(&self, r: Rejection) -> usize {
        self.rejected[Rejection::ALL.iter().position(|x| *x == r).unwrap_or(0)]
    }
}

const _: () = assert!(CELLS == 288);
