//! Acceptance report: one PASS/FAIL line per criterion. Runs without the
//! libtest harness so the lines always reach the output; a FAIL is reported,
//! not raised, and the hard assertions live in the other test files.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use maskbeat::checkpoint::Checkpoint;
use maskbeat::cli::main_with_args;
use maskbeat::service::{router, slider_to_temperature, AppState};
use maskbeat_core::decode::{decode, schedule_counts, GenerationRequest};
use maskbeat_core::eval::{novelty_report, run_variant, Variant};
use maskbeat_core::extract::{autocorrelate, deduplicate, downmix, mine_track, normalized_autocorrelation, ExtractionConfig};
use maskbeat_core::metrics::{beat_strength, instrument_balance, iou, max_balance, pattern_repetition};
use maskbeat_core::midi::QuantizedTrack;
use maskbeat_core::model::{
    dependency_loss, dependency_loss_grad, focal_loss, focal_loss_grad, focal_term, groove_loss, groove_loss_grad,
    groove_terms, total_loss, total_loss_grad, Grid, LossConfig, LossMix, ModelConfig, Weights, ZERO_GRID,
};
use maskbeat_core::pattern::{Cell, DrumPattern, Instrument, LoopRecord, MaskedPattern, CELLS, INSTRUMENTS, STEPS};
use maskbeat_core::rng::{derive_seed, seeded};
use maskbeat_core::synth::generate_synthetic_corpus;
use maskbeat_core::train::TrainConfig;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = (bool, String);
type Criterion = (&'static str, fn() -> Outcome);

fn grid(mut f: impl FnMut(usize, usize) -> f64) -> Grid {
    let mut g = ZERO_GRID;
    for (i, row) in g.iter_mut().enumerate() {
        for (t, x) in row.iter_mut().enumerate() {
            *x = f(i, t);
        }
    }
    g
}

fn on(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

// 1

struct Point {
    y: Grid,
    target: DrumPattern,
    mask: [u32; INSTRUMENTS],
}

fn worst_gradient_error<R>(seed: u64, value: impl Fn(&Point, &Grid) -> f64, analytic: impl Fn(&Point, &Grid, &mut Grid) -> R) -> f64 {
    const H: f64 = 1e-5;
    let mut rng = seeded(seed);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let y = grid(|_, _| rng.gen_range(0.02..0.98));
        let target = DrumPattern::from_fn(|_, _| rng.gen_bool(0.25));
        let mask: [u32; INSTRUMENTS] = std::array::from_fn(|_| rng.gen());
        let p = Point { y, target, mask };
        let mut g = ZERO_GRID;
        analytic(&p, &p.y, &mut g);
        for i in 0..INSTRUMENTS {
            for t in 0..STEPS {
                let (mut plus, mut minus) = (p.y, p.y);
                plus[i][t] += H;
                minus[i][t] -= H;
                let numeric = (value(&p, &plus) - value(&p, &minus)) / (2.0 * H);
                let scale = g[i][t].abs().max(numeric.abs());
                let err = (g[i][t] - numeric).abs();
                worst = worst.max(if scale < 1e-8 { err } else { err / scale });
            }
        }
    }
    worst
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let cfg = LossConfig::default();
    let dep = LossConfig { tom_term: true, ..LossConfig::default() };
    let heavy = LossConfig { mix: LossMix { focal: 1.0, dependency: 0.7, groove: 0.3 }, ..LossConfig::default() };
    let errs = [
        worst_gradient_error(11, |p, y| focal_loss(y, &p.target, &p.mask, &cfg), |p, y, g| focal_loss_grad(y, &p.target, &p.mask, &cfg, 1.0, g)),
        worst_gradient_error(12, |_, y| dependency_loss(y, &dep), |_, y, g| dependency_loss_grad(y, &dep, 1.0, g)),
        worst_gradient_error(13, |_, y| groove_loss(y, &cfg), |_, y, g| groove_loss_grad(y, &cfg, 1.0, g)),
        worst_gradient_error(14, |p, y| total_loss(y, &p.target, &p.mask, &heavy).total, |p, y, g| total_loss_grad(y, &p.target, &p.mask, &heavy, g)),
    ];
    let elapsed = start.elapsed();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    (
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!("worst relative error {worst:.2e} (focal {:.1e}, dependency {:.1e}, groove {:.1e}, total {:.1e}) in {:.1}s", errs[0], errs[1], errs[2], errs[3], elapsed.as_secs_f64()),
    )
}

// 2

fn loss_oracles() -> Outcome {
    let d = LossConfig::default();
    let saturated = grid(|i, t| match i {
        0 => on(t % 8 == 0),
        1 => on(t % 8 == 4),
        2 | 3 => 1.0,
        _ => 0.0,
    });
    let hats = dependency_loss(&saturated, &d);
    let focal = focal_term(0.5, 0.5, 2.0);
    let constant = [0.0, 0.37, 1.0].iter().map(|&c| groove_loss(&grid(|_, _| c), &d)).fold(0.0, f64::max);
    let (within, _) = groove_terms(&grid(|i, t| on(i == 0 && t >= 16)), &d);
    let (_, between) = groove_terms(&grid(|i, t| if i == 2 && t == 19 { 0.5 } else { 0.0 }), &d);
    let no_kick = dependency_loss(&grid(|i, t| on(i == 1 && t % 8 == 4)), &d);
    let rock = grid(|i, t| match i {
        0 => on(t % 8 == 0),
        1 => on(t % 8 == 4),
        2 => on(t % 2 == 0),
        3 => on(t % 8 == 7),
        4 => on(t == 30),
        5 => on(t == 31),
        _ => 0.0,
    });
    let ideal = dependency_loss(&rock, &LossConfig { tom_term: true, ..d.clone() });
    let bce = [0.01, 0.2, 0.5, 0.9].iter().all(|&p| close(focal_term(p, 1.0, 0.0), -f64::ln(p)));
    let pass = close(hats, 9.6)
        && close(focal, 0.5 * 0.25 * -(0.5f64.ln()))
        && (focal - 0.0866).abs() < 1e-4
        && constant == 0.0
        && close(within, 4.0)
        && close(d.beta * between, 0.075)
        && close(no_kick, 0.6)
        && ideal == 0.0
        && bce;
    (pass, format!("hi-hat {hats}, focal {focal:.6}, groove const {constant}, within {within}, between {:.4}, kick {no_kick}, ideal {ideal}", d.beta * between))
}

// 3

fn extraction_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = ExtractionConfig::default();
    let tiles = 8;
    let flips = STEPS * tiles / 50;
    let (mut found, mut matched, mut iou_sum) = (0, 0, 0.0);
    for (k, r) in generate_synthetic_corpus(50, 31).iter().enumerate() {
        let clean = QuantizedTrack::tiled(&r.pattern, tiles);
        let mut noisy = clean.clone();
        let steps = noisy.steps();
        let mut cells: Vec<usize> = (0..INSTRUMENTS * steps).collect();
        let (picked, _) = cells.partial_shuffle(&mut seeded(derive_seed(77, k as u64)), flips);
        for &c in picked.iter() {
            noisy.roll[c / steps][c % steps] ^= true;
        }
        let Ok(profile) = autocorrelate(&downmix(&noisy.roll), &cfg) else { continue };
        let (Some(period), Some(phase)) = (profile.best_period, profile.best_phase) else { continue };
        if !STEPS.is_multiple_of(period) {
            continue;
        }
        found += 1;
        let Ok(Ok(got)) = mine_track(&noisy, &cfg, "t") else { continue };
        let x = iou(&got.pattern, &clean.window(phase).unwrap());
        iou_sum += x;
        if x >= 0.95 {
            matched += 1;
        }
    }
    let elapsed = start.elapsed();
    (
        found >= 48 && matched >= 48 && elapsed < Duration::from_secs(30),
        format!(
            "{flips} flips per track: period dividing 32 in {found}/50, IoU >= 0.95 in {matched}/50 (mean {:.3}), {:.1}s",
            iou_sum / found.max(1) as f64,
            elapsed.as_secs_f64()
        ),
    )
}

// 4

fn autocorrelation_sanity() -> Outcome {
    let cfg = ExtractionConfig::default();
    let exact = generate_synthetic_corpus(20, 4).iter().all(|r| {
        let a = downmix(&QuantizedTrack::tiled(&r.pattern, 8).roll);
        normalized_autocorrelation(&a, 32) == 1.0
    });
    let mut rng = seeded(2024);
    let (mut sum, mut n, mut false_loops) = (0.0, 0usize, 0);
    for _ in 0..100 {
        let a: Vec<bool> = (0..256).map(|_| rng.gen_bool(0.2)).collect();
        let profile = autocorrelate(&a, &cfg).unwrap();
        false_loops += usize::from(profile.best_period.is_some());
        sum += profile.phi.iter().sum::<f64>();
        n += profile.phi.len();
    }
    let mean = sum / n as f64;
    (exact && (mean - 0.2).abs() <= 0.05 && false_loops == 0, format!("phi(32) exact: {exact}, noise mean phi {mean:.4}, false loops {false_loops}/100"))
}

// 5

fn metric_oracles() -> Outcome {
    let rock = DrumPattern::from_fn(|i, t| match i {
        0 => t % 8 == 0,
        1 => t % 8 == 4,
        2 => t % 2 == 0,
        _ => false,
    });
    let bar = DrumPattern::from_hits([(Instrument::Kick, 0), (Instrument::Snare, 4), (Instrument::Kick, 16), (Instrument::Snare, 20)]);
    let half = DrumPattern::from_hits([(Instrument::Kick, 0), (Instrument::Kick, 8), (Instrument::Kick, 16), (Instrument::Snare, 20)]);
    let mut checks = vec![
        beat_strength(&DrumPattern::from_hits([(Instrument::Kick, 0), (Instrument::Kick, 8)])) == 1.0,
        beat_strength(&DrumPattern::empty()) == 0.5,
        beat_strength(&rock) == 0.5,
        pattern_repetition(&bar) == 1.0,
        pattern_repetition(&DrumPattern::from_hits([(Instrument::Kick, 0), (Instrument::Snare, 20)])) == 0.0,
        (pattern_repetition(&half) - 0.5).abs() < 1e-15,
        instrument_balance(&DrumPattern::from_fn(|i, t| i == 3 && t % 3 == 0)) == 0.0,
        (instrument_balance(&DrumPattern::from_fn(|_, t| t % 4 == 1)) - 9f64.log2()).abs() < 1e-12,
        instrument_balance(&DrumPattern::from_fn(|i, t| (i == 0 || i == 7) && t % 5 == 0)) == 1.0,
        instrument_balance(&DrumPattern::empty()) == 0.0,
        iou(&DrumPattern::empty(), &DrumPattern::empty()) == 1.0,
    ];
    let mut rng = seeded(6);
    let mut top = 0.0f64;
    for _ in 0..1000 {
        let density = rng.gen_range(0.0..1.0);
        top = top.max(instrument_balance(&DrumPattern::from_fn(|_, _| rng.gen_bool(density))));
    }
    checks.push(top <= max_balance());
    let ok = checks.iter().filter(|&&c| c).count();
    (ok == checks.len(), format!("{ok}/{} oracles, max entropy seen {top:.4} <= {:.4}", checks.len(), max_balance()))
}

// 6

fn schedule() -> Outcome {
    let formula: Vec<usize> = (1..=10).map(|k| (288.0 * (PI * k as f64 / 20.0).cos() - 1e-9).ceil().max(0.0) as usize).collect();
    let literal = [285, 274, 257, 233, 204, 170, 131, 89, 46, 0];
    let cfg = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, ffn_mult: 2, ..ModelConfig::default() };
    let w = Weights::init(&cfg, 1).unwrap();
    let traced = decode(&cfg, &w, &GenerationRequest::new(MaskedPattern::fully_masked(), 5)).unwrap().trace.masked_counts();
    (formula == literal && schedule_counts(CELLS, 10) == literal && traced == literal, format!("decoder trace {traced:?}"))
}

// 7

fn locking() -> Outcome {
    let cfg = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, ffn_mult: 2, dropout: 0.0, ..ModelConfig::default() };
    let mut w = Weights::init(&cfg, 3).unwrap();
    w.scale(40.0);
    let (mut errors, mut violations, mut locked_total) = (0, 0, 0usize);
    for k in 0..1000u64 {
        let mut rng = seeded(derive_seed(99, k));
        let mut mp = MaskedPattern::fully_masked();
        let (p_known, p_lock) = (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0));
        let mut locked = Vec::new();
        for i in 0..INSTRUMENTS {
            for t in 0..STEPS {
                if rng.gen_bool(p_known) {
                    let hit = rng.gen_bool(0.3);
                    mp.set_cell(i, t, if hit { Cell::Hit } else { Cell::Silent }).unwrap();
                    if rng.gen_bool(p_lock) {
                        mp.lock(i, t).unwrap();
                        locked.push((i, t, hit));
                    }
                }
            }
        }
        let req = GenerationRequest {
            temperature: rng.gen_range(0.1..3.0),
            iterations: rng.gen_range(1..=16),
            confidence_noise: rng.gen_bool(0.8),
            ..GenerationRequest::new(mp, rng.gen())
        };
        locked_total += locked.len();
        match decode(&cfg, &w, &req) {
            Ok(g) => violations += locked.iter().filter(|&&(i, t, hit)| g.pattern.get(i, t) != hit).count(),
            Err(_) => errors += 1,
        }
    }
    (errors == 0 && violations == 0, format!("1000 requests, {locked_total} locked cells, {violations} changed, {errors} errors"))
}

// 8

fn toy_training() -> Outcome {
    let records = generate_synthetic_corpus(200, 0);
    let model = ModelConfig::default();
    let loss = LossConfig::default();
    let base = TrainConfig::default();
    let mut halved = true;
    let mut slowest = Duration::ZERO;
    let mut coact = [0.0; 2];
    let mut ratios = Vec::new();
    for (v, variant) in [Variant::Mg, Variant::Dl].into_iter().enumerate() {
        for seed in 1..=3 {
            let start = Instant::now();
            let r = run_variant(&records, variant, seed, &model, &loss, &base, 200).unwrap();
            slowest = slowest.max(start.elapsed());
            let first = r.outcome.curve.first().unwrap().val.focal;
            let last = r.outcome.curve.last().unwrap().val.focal;
            halved &= last < 0.5 * first;
            ratios.push(format!("{}{seed} {:.3}", variant.name(), last / first));
            coact[v] += r.hihat_coactivation / 3.0;
        }
    }
    (
        halved && coact[1] <= coact[0] && slowest < Duration::from_secs(600),
        format!(
            "final/epoch-0 val focal [{}], CHH&OHH mg {:.4} dl {:.4}, slowest run {:.0}s",
            ratios.join(", "),
            coact[0],
            coact[1],
            slowest.as_secs_f64()
        ),
    )
}

// 9

fn cli(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("maskbeat").chain(args.iter().copied()))
}

fn pipeline(d: &Path) -> bool {
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();
    let steps: [Vec<String>; 4] = [
        vec!["--seed", "4", "synth-corpus", "--n", "24", "--out", &p("synth.jsonl"), "--midi-dir", &p("midi")],
        vec!["extract", "--in", &p("midi"), "--out", &p("data.jsonl")],
        vec!["--seed", "9", "train", "--data", &p("data.jsonl"), "--out", &p("m.ckpt"), "--epochs", "3", "--d-model", "16", "--layers", "1", "--heads", "2", "--batch", "8"],
        vec!["--seed", "5", "generate", "--ckpt", &p("m.ckpt"), "--out", &p("g.json")],
    ]
    .map(|v| v.into_iter().map(String::from).collect());
    steps.iter().all(|args| cli(&args.iter().map(String::as_str).collect::<Vec<_>>()) == 0)
}

fn determinism() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if !(pipeline(a.path()) && pipeline(b.path())) {
        return (false, "pipeline command failed".into());
    }
    let files = ["synth.jsonl", "data.jsonl", "m.ckpt", "m.ckpt.csv", "g.json"];
    let differing: Vec<&str> =
        files.iter().copied().filter(|f| fs::read(a.path().join(f)).unwrap() != fs::read(b.path().join(f)).unwrap()).collect();
    let fingerprint = Checkpoint::load(&a.path().join("m.ckpt")).unwrap().fingerprint();
    (differing.is_empty(), format!("{} files compared, differing {differing:?}, checkpoint {fingerprint}", files.len()))
}

// 10

fn dedup() -> Outcome {
    let rec = |p: DrumPattern, id: &str| LoopRecord::new(p, id);
    let base = DrumPattern::from_fn(|i, t| i < 2 && t < 25);
    let keep = |n: usize| DrumPattern::from_fn(|i, t| i < 2 && t < 25 && i * 25 + t < n);
    let twenty = DrumPattern::from_fn(|i, t| i == 0 && t < 20);
    let seventeen = DrumPattern::from_fn(|i, t| i == 0 && t < 17);
    let pairs = [
        deduplicate(vec![rec(base, "a"), rec(keep(43), "b")], 0.85).len() == 1,
        deduplicate(vec![rec(base, "a"), rec(keep(42), "b")], 0.85).len() == 2,
        deduplicate(vec![rec(twenty, "a"), rec(seventeen, "b")], 0.85).len() == 1,
    ];
    let mut rng = seeded(17);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let seedp = DrumPattern::from_fn(|_, _| rng.gen_bool(0.15));
        let set: Vec<LoopRecord> = (0..40)
            .map(|k| rec(DrumPattern::from_fn(|i, t| seedp.get(i, t) ^ rng.gen_bool(0.03)), &format!("{k}")))
            .collect();
        let out = deduplicate(set, 0.85);
        for (x, a) in out.iter().enumerate() {
            for b in &out[x + 1..] {
                worst = worst.max(iou(&a.pattern, &b.pattern));
            }
        }
    }
    (pairs.iter().all(|&x| x) && worst < 0.85, format!("straddling pairs {pairs:?}, max pairwise IoU after dedup {worst:.4}"))
}

// 11

fn novelty() -> Outcome {
    let mut rng = seeded(9);
    let training: Vec<DrumPattern> = (0..40).map(|_| DrumPattern::from_fn(|_, _| rng.gen_bool(0.2))).collect();
    let subset: Vec<DrumPattern> = training.iter().step_by(3).copied().collect();
    let sub = novelty_report(&subset, &training).unwrap().max;
    let even: Vec<DrumPattern> = (0..10).map(|k| DrumPattern::from_fn(|i, t| t % 2 == 0 && (i + k + t) % 3 == 0)).collect();
    let odd: Vec<DrumPattern> = (0..10).map(|k| DrumPattern::from_fn(|i, t| t % 2 == 1 && (i * k + t) % 4 != 0)).collect();
    let disjoint = novelty_report(&even, &odd).unwrap().max;
    let generated: Vec<DrumPattern> = (0..25).map(|_| DrumPattern::from_fn(|_, _| rng.gen_bool(0.2))).collect();
    let base = novelty_report(&generated, &training).unwrap();
    let invariant = (0..5).all(|_| {
        let mut shuffled = training.clone();
        shuffled.shuffle(&mut rng);
        novelty_report(&generated, &shuffled).unwrap() == base
    });
    (sub == 1.0 && disjoint == 0.0 && invariant, format!("subset max {sub}, disjoint max {disjoint}, order invariant {invariant}"))
}

// 12

async fn post(state: &AppState, uri: &str, body: Value) -> (StatusCode, Value) {
    let req = Request::builder().method("POST").uri(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    let resp = router(state.clone(), None).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn service() -> Outcome {
    let cfg = ModelConfig { d_model: 8, n_layers: 1, n_heads: 2, ffn_mult: 2, ..ModelConfig::default() };
    let ckpt = Checkpoint::new(&cfg, &LossConfig::default(), Weights::init(&cfg, 5).unwrap(), 0, 0, 5, "acceptance".into());
    let state = AppState::with_model(ckpt.into());
    let rock: Vec<Vec<u8>> = (0..9).map(|i| (0..32).map(|t| u8::from((i == 0 && t % 8 == 0) || (i == 1 && t % 8 == 4) || (i == 2 && t % 2 == 0))).collect()).collect();
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let (s1, v) = post(&state, "/api/v1/generate", json!({"grid": rock, "row_locks": vec![true; 9], "seed": 1})).await;
        let round_trip = s1 == StatusCode::OK && v["grid"] == json!(rock);
        let (s2, e) = post(&state, "/api/v1/generate", json!({"grid": vec![vec![0; 33]; 9]})).await;
        let field = e["field"].as_str().unwrap_or("").to_string();
        let slider = slider_to_temperature(0.0) == 0.25 && slider_to_temperature(1.0) == 2.5;
        (
            round_trip && s2 == StatusCode::BAD_REQUEST && field == "grid[0]" && slider,
            format!("locked round trip {round_trip}, malformed grid -> {} field {field:?}, slider {slider}", s2.as_u16()),
        )
    })
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("loss gradients", gradients),
        ("loss value oracles", loss_oracles),
        ("loop extraction oracle", extraction_oracle),
        ("autocorrelation sanity", autocorrelation_sanity),
        ("metric oracles", metric_oracles),
        ("decode schedule", schedule),
        ("locking invariance", locking),
        ("toy training", toy_training),
        ("determinism", determinism),
        ("dedup", dedup),
        ("novelty", novelty),
        ("service integration", service),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut passed = 0;
    let mut run = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let n = k + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        run += 1;
        let (pass, detail) = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| (false, "panicked".into()));
        passed += usize::from(pass);
        println!("{} {n:>2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {passed}/{run} criteria pass");
}
