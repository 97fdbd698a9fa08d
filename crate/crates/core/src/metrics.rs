//! Pattern quality metrics and set similarity.
//!
//! * beat strength: share of quarter-note hits that land on beats 1 and 3
//!   rather than 2 and 4 (sixteenth offsets are excluded);
//! * pattern repetition: cosine similarity of bar 1 and bar 2;
//! * instrument balance: base-2 Shannon entropy of per-instrument hit shares.

use crate::math;
use crate::pattern::{DrumPattern, BAR_STEPS, INSTRUMENTS};

/// Steps on beats 1 and 3 of each bar.
pub const STRONG_MASK: u32 = (1 << 0) | (1 << 8) | (1 << 16) | (1 << 24);
/// Steps on beats 2 and 4 of each bar.
pub const WEAK_MASK: u32 = (1 << 4) | (1 << 12) | (1 << 20) | (1 << 28);

/// Upper bound of [`instrument_balance`]: `log2 9`.
pub fn max_balance() -> f64 {
    math::log2(INSTRUMENTS as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternMetrics {
    pub beat_strength: f64,
    pub pattern_repetition: f64,
    pub instrument_balance: f64,
}

impl PatternMetrics {
    pub fn of(p: &DrumPattern) -> Self {
        PatternMetrics {
            beat_strength: beat_strength(p),
            pattern_repetition: pattern_repetition(p),
            instrument_balance: instrument_balance(p),
        }
    }
}

/// `S / (S + W)`; 0.5 when no quarter-note position is active.
pub fn beat_strength(p: &DrumPattern) -> f64 {
    let (mut strong, mut weak) = (0u32, 0u32);
    for r in p.rows() {
        strong += (r & STRONG_MASK).count_ones();
        weak += (r & WEAK_MASK).count_ones();
    }
    if strong + weak == 0 {
        0.5
    } else {
        f64::from(strong) / f64::from(strong + weak)
    }
}

/// Cosine similarity between the flattened bars; 0 if either bar is silent.
pub fn pattern_repetition(p: &DrumPattern) -> f64 {
    bar_cosine(&p.bar(0), &p.bar(1))
}

/// Cosine similarity of two binary 9 × 16 bars.
pub fn bar_cosine(a: &[u16; INSTRUMENTS], b: &[u16; INSTRUMENTS]) -> f64 {
    let (mut dot, mut na, mut nb) = (0u32, 0u32, 0u32);
    for (x, y) in a.iter().zip(b) {
        dot += (x & y).count_ones();
        na += x.count_ones();
        nb += y.count_ones();
    }
    if na == 0 || nb == 0 {
        return 0.0;
    }
    f64::from(dot) / math::sqrt(f64::from(na) * f64::from(nb))
}

/// Repetition measured across a sequence of loops played back to back:
/// the mean cosine over every consecutive pair of bars in the concatenation.
///
/// For a single loop tiled against itself this includes the seam between
/// bar 2 and the next bar 1.
pub fn tiled_repetition(loops: &[DrumPattern]) -> f64 {
    let bars: alloc::vec::Vec<[u16; INSTRUMENTS]> =
        loops.iter().flat_map(|p| [p.bar(0), p.bar(1)]).collect();
    if bars.len() < 2 {
        return 0.0;
    }
    let sum: f64 = bars.windows(2).map(|w| bar_cosine(&w[0], &w[1])).sum();
    sum / (bars.len() - 1) as f64
}

/// Base-2 entropy of the instrument hit distribution; 0 for an empty pattern.
pub fn instrument_balance(p: &DrumPattern) -> f64 {
    let total = p.hit_count();
    if total == 0 {
        return 0.0;
    }
    let total = total as f64;
    p.rows()
        .iter()
        .filter(|r| **r != 0)
        .map(|r| {
            let q = f64::from(r.count_ones()) / total;
            -q * math::log2(q)
        })
        .sum()
}

/// Intersection over union of active cells; 1.0 when both are empty.
pub fn iou(a: &DrumPattern, b: &DrumPattern) -> f64 {
    let union = a.union_count(b);
    if union == 0 {
        return 1.0;
    }
    a.intersection_count(b) as f64 / union as f64
}

pub fn jaccard_distance(a: &DrumPattern, b: &DrumPattern) -> f64 {
    1.0 - iou(a, b)
}

const _: () = assert!(BAR_STEPS == 16);
