use std::fs;

use maskbeat::dataset::{build_dataset, midi_files, write_midi_corpus};
use maskbeat_core::extract::{AugmentMode, ExtractionConfig};
use maskbeat_core::metrics::iou;
use maskbeat_core::midi::QuantizeConfig;
use maskbeat_core::synth::generate_synthetic_corpus;

fn build(dir: &std::path::Path, mode: AugmentMode) -> (Vec<maskbeat_core::LoopRecord>, maskbeat::dataset::DatasetReport) {
    build_dataset(dir, &ExtractionConfig::default(), &QuantizeConfig::default(), mode, 0).unwrap()
}

#[test]
fn empty_directory_gives_empty_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (records, report) = build(dir.path(), AugmentMode::None);
    assert!(records.is_empty());
    assert_eq!(report.files, 0);
    assert_eq!(report.total, 0);
    assert!(report.to_string().contains("files: 0"));
}

#[test]
fn synthetic_files_are_all_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let truth = generate_synthetic_corpus(10, 21);
    write_midi_corpus(dir.path(), &truth).unwrap();
    let (records, report) = build(dir.path(), AugmentMode::None);
    assert_eq!(report.files, 10);
    assert!(report.skipped.is_empty());
    assert_eq!(report.tally.accepted, 10);
    assert_eq!(report.duplicates_removed, 0);
    assert_eq!(records.len(), 10);
    // each mined loop is a rotation of the loop that was rendered
    for (k, r) in records.iter().enumerate() {
        assert_eq!(r.source_id, format!("loop_{k:05}.mid"));
        let src = truth[k].pattern;
        assert!((0..32).any(|s| src.rotate(s) == r.pattern), "loop {k} is not a rotation of its source");
        assert!((r.tempo_bpm - truth[k].tempo_bpm).abs() < 0.01);
        assert!(r.period_score > 0.8 && r.period_score <= 1.0);
    }
}

#[test]
fn corrupt_file_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    write_midi_corpus(dir.path(), &generate_synthetic_corpus(4, 8)).unwrap();
    fs::write(dir.path().join("broken.mid"), b"MThd\x00\x00\x00\x06garbage").unwrap();
    fs::write(dir.path().join("notes.txt"), b"not midi at all").unwrap();
    assert_eq!(midi_files(dir.path()).unwrap().len(), 5);
    let (records, report) = build(dir.path(), AugmentMode::None);
    assert_eq!(records.len(), 4);
    assert_eq!(report.skipped.len(), 1);
    assert!(report.skipped[0].0.ends_with("broken.mid"));
}

#[test]
fn augmentation_and_dedup() {
    let dir = tempfile::tempdir().unwrap();
    let mut corpus = generate_synthetic_corpus(3, 40);
    // a duplicate of the first loop under another name
    corpus.push(corpus[0].clone());
    write_midi_corpus(dir.path(), &corpus).unwrap();
    let (plain, report) = build(dir.path(), AugmentMode::None);
    assert_eq!(report.duplicates_removed, 1);
    assert_eq!(plain.len(), 3);
    for (a, x) in plain.iter().enumerate() {
        for y in &plain[a + 1..] {
            assert!(iou(&x.pattern, &y.pattern) < 0.85);
        }
    }
    let (shifted, report) = build(dir.path(), AugmentMode::Shift);
    assert_eq!(shifted.len(), 3 * 17);
    assert_eq!(report.augmented, 3 * 16);
    let (all, _) = build(dir.path(), AugmentMode::All);
    assert!(all.len() >= shifted.len());
    let (again, _) = build(dir.path(), AugmentMode::All);
    assert_eq!(all, again);
}

#[test]
fn missing_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = build_dataset(
        &dir.path().join("nope"),
        &ExtractionConfig::default(),
        &QuantizeConfig::default(),
        AugmentMode::None,
        0,
    )
    .unwrap_err();
    assert!(matches!(err, maskbeat::Error::Io { .. }));
    assert_eq!(err.exit_code(), 2);
}
