use maskbeat_core::eval::{evaluate_set, novelty_report};
use maskbeat_core::metrics::{
    beat_strength, instrument_balance, iou, jaccard_distance, max_balance, pattern_repetition, PatternMetrics,
};
use maskbeat_core::pattern::{DrumPattern, Instrument, INSTRUMENTS, STEPS};
use maskbeat_core::rng::seeded;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

fn pattern() -> impl Strategy<Value = DrumPattern> {
    (prop::array::uniform9(any::<u32>()), 0u32..4).prop_map(|(rows, thin)| {
        // AND-ing extra random words gives a spread of densities
        DrumPattern::from_fn(|i, t| {
            let r = (0..thin).fold(rows[i], |acc, k| acc & rows[(i + k as usize + 1) % INSTRUMENTS].rotate_left(k + 3));
            r >> t & 1 == 1
        })
    })
}

fn rock() -> DrumPattern {
    DrumPattern::from_fn(|i, t| match i {
        0 => t % 8 == 0,
        1 => t % 8 == 4,
        2 => t % 2 == 0,
        _ => false,
    })
}

#[test]
fn beat_strength_oracles() {
    assert_eq!(beat_strength(&DrumPattern::from_hits([(Instrument::Kick, 0), (Instrument::Kick, 8)])), 1.0);
    assert_eq!(beat_strength(&DrumPattern::empty()), 0.5);
    assert_eq!(beat_strength(&rock()), 0.5);
}

#[test]
fn repetition_oracles() {
    let bar = DrumPattern::from_hits([(Instrument::Kick, 0), (Instrument::Snare, 4), (Instrument::Kick, 16), (Instrument::Snare, 20)]);
    assert_eq!(pattern_repetition(&bar), 1.0);
    let disjoint = DrumPattern::from_hits([(Instrument::Kick, 0), (Instrument::Snare, 20)]);
    assert_eq!(pattern_repetition(&disjoint), 0.0);
    let half = DrumPattern::from_hits([
        (Instrument::Kick, 0),
        (Instrument::Kick, 8),
        (Instrument::Kick, 16),
        (Instrument::Snare, 20),
    ]);
    assert!((pattern_repetition(&half) - 0.5).abs() < 1e-15);
}

#[test]
fn balance_oracles() {
    assert_eq!(instrument_balance(&DrumPattern::from_fn(|i, t| i == 3 && t % 3 == 0)), 0.0);
    let uniform = DrumPattern::from_fn(|_, t| t % 4 == 1);
    assert!((instrument_balance(&uniform) - 9f64.log2()).abs() < 1e-12);
    assert!((max_balance() - 3.169_925_001_442_312).abs() < 1e-12);
    let two = DrumPattern::from_fn(|i, t| (i == 0 || i == 7) && t % 5 == 0);
    assert_eq!(instrument_balance(&two), 1.0);
    assert_eq!(instrument_balance(&DrumPattern::empty()), 0.0);
}

#[test]
fn iou_oracles() {
    let a = DrumPattern::from_hits([(Instrument::Kick, 0), (Instrument::Kick, 8), (Instrument::Snare, 4), (Instrument::Snare, 12)]);
    assert_eq!(iou(&a, &a), 1.0);
    assert_eq!(jaccard_distance(&a, &a), 0.0);
    let disjoint = DrumPattern::from_hits([(Instrument::Ride, 0)]);
    assert_eq!(iou(&a, &disjoint), 0.0);
    assert_eq!(jaccard_distance(&a, &disjoint), 1.0);
    let b = DrumPattern::from_hits([(Instrument::Kick, 0), (Instrument::Kick, 8), (Instrument::Crash, 0), (Instrument::Ride, 2)]);
    assert!((iou(&a, &b) - 2.0 / 6.0).abs() < 1e-15);
    // 17 shared of 20 in the union
    let c = DrumPattern::from_fn(|i, t| i == 2 && t < 20);
    let d = DrumPattern::from_fn(|i, t| i == 2 && (3..20).contains(&t));
    assert!((jaccard_distance(&c, &d) - 0.15).abs() < 1e-12);
}

#[test]
fn set_means() {
    let m = evaluate_set(&[rock(), rock(), rock()]).unwrap();
    assert_eq!(m.mean, PatternMetrics::of(&rock()));
    let strong = DrumPattern::from_hits([(Instrument::Kick, 0), (Instrument::Kick, 8)]);
    let m = evaluate_set(&[strong, DrumPattern::empty()]).unwrap();
    assert_eq!(m.mean.beat_strength, 0.75);
}

#[test]
fn entropy_bound_over_many_patterns() {
    let mut rng = seeded(5);
    for _ in 0..1000 {
        let density = rng.gen_range(0.01..1.0);
        let p = DrumPattern::from_fn(|_, _| rng.gen_bool(density));
        let h = instrument_balance(&p);
        assert!((0.0..=max_balance() + 1e-12).contains(&h), "{h}");
    }
}

#[test]
fn novelty_subset_disjoint_and_order() {
    let mut rng = seeded(9);
    let training: Vec<DrumPattern> = (0..40).map(|_| DrumPattern::from_fn(|_, _| rng.gen_bool(0.2))).collect();
    let subset: Vec<DrumPattern> = training.iter().step_by(3).copied().collect();
    let r = novelty_report(&subset, &training).unwrap();
    assert_eq!(r.max, 1.0);
    assert!(r.nearest.iter().all(|&x| x == 1.0));

    let even: Vec<DrumPattern> = (0..10).map(|k| DrumPattern::from_fn(|i, t| t % 2 == 0 && (i + k + t) % 3 == 0)).collect();
    let odd: Vec<DrumPattern> = (0..10).map(|k| DrumPattern::from_fn(|i, t| t % 2 == 1 && (i * k + t) % 4 != 0)).collect();
    assert_eq!(novelty_report(&even, &odd).unwrap().max, 0.0);

    let generated: Vec<DrumPattern> = (0..25).map(|_| DrumPattern::from_fn(|_, _| rng.gen_bool(0.2))).collect();
    let base = novelty_report(&generated, &training).unwrap();
    for _ in 0..5 {
        let mut shuffled = training.clone();
        shuffled.shuffle(&mut rng);
        assert_eq!(novelty_report(&generated, &shuffled).unwrap(), base);
    }
}

fn permute_steps_within_classes(p: &DrumPattern, perm_strong: &[usize; 4], perm_weak: &[usize; 4]) -> DrumPattern {
    const STRONG: [usize; 4] = [0, 8, 16, 24];
    const WEAK: [usize; 4] = [4, 12, 20, 28];
    DrumPattern::from_fn(|i, t| {
        if let Some(k) = STRONG.iter().position(|&s| s == t) {
            p.get(i, STRONG[perm_strong[k]])
        } else if let Some(k) = WEAK.iter().position(|&s| s == t) {
            p.get(i, WEAK[perm_weak[k]])
        } else {
            p.get(i, t)
        }
    })
}

proptest! {
    #[test]
    fn metrics_are_bounded(p in pattern()) {
        let m = PatternMetrics::of(&p);
        prop_assert!((0.0..=1.0).contains(&m.beat_strength));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&m.pattern_repetition));
        prop_assert!((0.0..=max_balance() + 1e-12).contains(&m.instrument_balance));
    }

    #[test]
    fn balance_ignores_instrument_order(p in pattern(), rot in 0usize..INSTRUMENTS) {
        let q = DrumPattern::from_fn(|i, t| p.get((i + rot) % INSTRUMENTS, t));
        prop_assert!((instrument_balance(&p) - instrument_balance(&q)).abs() < 1e-12);
        prop_assert_eq!(beat_strength(&p), beat_strength(&q));
        prop_assert!((pattern_repetition(&p) - pattern_repetition(&q)).abs() < 1e-12);
    }

    #[test]
    fn beat_strength_ignores_order_within_beat_classes(
        p in pattern(),
        s in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        w in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let (s, w): ([usize; 4], [usize; 4]) = (s.try_into().unwrap(), w.try_into().unwrap());
        prop_assert_eq!(beat_strength(&p), beat_strength(&permute_steps_within_classes(&p, &s, &w)));
    }

    #[test]
    fn repetition_is_symmetric_in_bars(p in pattern()) {
        prop_assert!((pattern_repetition(&p) - pattern_repetition(&p.rotate(16))).abs() < 1e-12);
    }

    #[test]
    fn iou_is_symmetric_and_bounded(a in pattern(), b in pattern()) {
        let x = iou(&a, &b);
        prop_assert_eq!(x, iou(&b, &a));
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(iou(&a, &a), 1.0);
        prop_assert!((jaccard_distance(&a, &b) - (1.0 - x)).abs() < 1e-15);
    }

    #[test]
    fn rotation_is_a_group_action(p in pattern(), j in 0usize..64, k in 0usize..64) {
        prop_assert_eq!(p.rotate(j).rotate(k), p.rotate(j + k));
        prop_assert_eq!(p.rotate(STEPS), p);
        prop_assert_eq!(p.rotate(16).rotate(16), p);
        prop_assert_eq!(p.rotate(j).hit_count(), p.hit_count());
    }

    #[test]
    fn grid_round_trip(p in pattern()) {
        prop_assert_eq!(DrumPattern::from_grid(&p.to_grid()), p);
    }
}
