//! Seeded stochastic drum grammar standing in for a real loop corpus.
//!
//! Each step of a one-bar template draws independent "slots": kick, snare,
//! hi-hat (closed xor open), one tom at most, one cymbal at most. Bar 2
//! repeats bar 1 with each step redrawn with probability [`VARIATION`], so the
//! per-cell marginals are the same in both bars and are known exactly.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::extract::ExtractionConfig;
use crate::model::{Grid, ZERO_GRID};
use crate::pattern::{DrumPattern, Instrument, LoopRecord, BAR_STEPS, STEPS};
use crate::rng;

/// Probability that a bar-2 step is redrawn instead of copied from bar 1.
pub const VARIATION: f64 = 0.15;

/// Slot probabilities for step `s` (0..16) of a bar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepProbabilities {
    pub kick: f64,
    pub snare: f64,
    pub closed_hat: f64,
    pub open_hat: f64,
    /// Probability of one tom; low/mid/high equally likely.
    pub tom: f64,
    pub crash: f64,
    pub ride: f64,
}

pub fn step_probabilities(s: usize) -> StepProbabilities {
    let kick = match s {
        0 | 8 => 0.9,
        6 | 10 | 14 => 0.15,
        _ => 0.02,
    };
    let snare = match s {
        4 | 12 => 0.9,
        7 | 15 => 0.08,
        _ => 0.01,
    };
    let (hat, open_share) = match s % 8 {
        0 => (0.8, 0.03),
        4 => (0.15, 0.03),
        2 | 6 => (0.8, 0.15),
        _ => (0.05, 0.0),
    };
    let tom = if s >= 12 { 0.1 } else { 0.01 };
    let (crash, ride) = match s {
        0 => (0.35, 0.05),
        _ if s.is_multiple_of(4) => (0.0, 0.05),
        _ => (0.0, 0.01),
    };
    StepProbabilities {
        kick,
        snare,
        closed_hat: hat * (1.0 - open_share),
        open_hat: hat * open_share,
        tom,
        crash,
        ride,
    }
}

/// Exact per-cell hit probabilities of the grammar (before quality filtering).
pub fn cell_probabilities() -> Grid {
    let mut g = ZERO_GRID;
    for t in 0..STEPS {
        let p = step_probabilities(t % BAR_STEPS);
        g[Instrument::Kick.index()][t] = p.kick;
        g[Instrument::Snare.index()][t] = p.snare;
        g[Instrument::ClosedHiHat.index()][t] = p.closed_hat;
        g[Instrument::OpenHiHat.index()][t] = p.open_hat;
        for tom in Instrument::TOMS {
            g[tom.index()][t] = p.tom / 3.0;
        }
        g[Instrument::Crash.index()][t] = p.crash;
        g[Instrument::Ride.index()][t] = p.ride;
    }
    g
}

fn draw_step<R: Rng + ?Sized>(rng: &mut R, s: usize) -> [bool; 9] {
    let p = step_probabilities(s);
    let mut cell = [false; 9];
    cell[Instrument::Kick.index()] = rng.gen::<f64>() < p.kick;
    cell[Instrument::Snare.index()] = rng.gen::<f64>() < p.snare;
    let u: f64 = rng.gen();
    if u < p.closed_hat {
        cell[Instrument::ClosedHiHat.index()] = true;
    } else if u < p.closed_hat + p.open_hat {
        cell[Instrument::OpenHiHat.index()] = true;
    }
    let u: f64 = rng.gen();
    if u < p.tom {
        let which = rng.gen_range(0..3);
        cell[Instrument::TOMS[which].index()] = true;
    }
    let u: f64 = rng.gen();
    if u < p.crash {
        cell[Instrument::Crash.index()] = true;
    } else if u < p.crash + p.ride {
        cell[Instrument::Ride.index()] = true;
    }
    cell
}

/// One loop from the grammar (not yet quality-filtered).
pub fn sample_loop<R: Rng + ?Sized>(rng: &mut R) -> DrumPattern {
    let mut p = DrumPattern::empty();
    let mut bar = [[false; 9]; BAR_STEPS];
    for (s, step) in bar.iter_mut().enumerate() {
        *step = draw_step(rng, s);
    }
    for t in 0..STEPS {
        let s = t % BAR_STEPS;
        let cell = if t >= BAR_STEPS && rng.gen::<f64>() < VARIATION { draw_step(rng, s) } else { bar[s] };
        for (i, on) in cell.iter().enumerate() {
            if *on {
                p.set(i, t, true);
            }
        }
    }
    p
}

/// `n` loops that all satisfy the default quality filters.
pub fn generate_synthetic_corpus(n: usize, seed: u64) -> Vec<LoopRecord> {
    let quality = ExtractionConfig::default();
    let mut rng = rng::seeded(rng::derive_seed(seed, 0x5EED));
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = sample_loop(&mut rng);
        if quality.check_quality(&p).is_err() {
            continue;
        }
        let tempo = f64::from(rng.gen_range(60u32..=180));
        out.push(LoopRecord {
            pattern: p,
            tempo_bpm: tempo,
            source_id: format!("synth-{seed}-{:05}", out.len()),
            period_score: 1.0,
            genre_tag: Some(String::from("synthetic")),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::beat_strength;

    #[test]
    fn corpus_contract() {
        let corpus = generate_synthetic_corpus(200, 1);
        assert_eq!(corpus.len(), 200);
        for r in &corpus {
            let d = r.pattern.density();
            assert!((0.05..0.40).contains(&d));
            assert!(r.pattern.hit_count() >= 6);
            let chh = r.pattern.row(Instrument::ClosedHiHat.index());
            let ohh = r.pattern.row(Instrument::OpenHiHat.index());
            assert_eq!(chh & ohh, 0);
            assert!((60.0..=180.0).contains(&r.tempo_bpm));
        }
    }

    #[test]
    fn corpus_beat_strength_is_high() {
        let corpus = generate_synthetic_corpus(2000, 7);
        let mean = corpus.iter().map(|r| beat_strength(&r.pattern)).sum::<f64>() / corpus.len() as f64;
        assert!(mean > 0.6, "{mean}");
    }

    #[test]
    fn marginals_match_sampling() {
        let mut rng = rng::seeded(5);
        let n = 20_000;
        let mut counts = [[0usize; STEPS]; 9];
        for _ in 0..n {
            for (i, t) in sample_loop(&mut rng).hits() {
                counts[i][t] += 1;
            }
        }
        let probs = cell_probabilities();
        for i in 0..9 {
            for t in 0..STEPS {
                let freq = counts[i][t] as f64 / n as f64;
                let p = probs[i][t];
                let sd = libm::sqrt(p * (1.0 - p) / n as f64).max(1e-3);
                assert!((freq - p).abs() < 5.0 * sd, "cell ({i}, {t}): {freq} vs {p}");
            }
        }
    }
}
