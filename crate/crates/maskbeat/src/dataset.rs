//! MIDI directory → loop dataset: ingest, mine, filter, dedup, augment.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use maskbeat_core::extract::{
    augment, deduplicate, mine_track, AugmentConfig, AugmentMode, ExtractionConfig, ExtractionTally, FrequencyTable,
    Rejection,
};
use maskbeat_core::midi::{encode_drum_roll, ingest, QuantizeConfig, QuantizedTrack};
use maskbeat_core::pattern::LoopRecord;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Tiling used when rendering synthetic loops to MIDI (128 steps).
pub const SYNTH_TILES: usize = 4;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetReport {
    pub files: usize,
    /// Files that could not be read, parsed or analysed, with the reason.
    pub skipped: Vec<(String, String)>,
    pub tally: ExtractionTally,
    pub duplicates_removed: usize,
    pub augmented: usize,
    pub total: usize,
}

impl fmt::Display for DatasetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "files: {}", self.files)?;
        writeln!(f, "skipped: {}", self.skipped.len())?;
        for (name, why) in &self.skipped {
            writeln!(f, "  {name}: {why}")?;
        }
        writeln!(f, "accepted: {}", self.tally.accepted)?;
        for r in Rejection::ALL {
            writeln!(f, "rejected.{}: {}", r.name(), self.tally.rejected(r))?;
        }
        writeln!(f, "duplicates_removed: {}", self.duplicates_removed)?;
        writeln!(f, "augmented: {}", self.augmented)?;
        write!(f, "total: {}", self.total)
    }
}

fn is_midi(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("mid") || e.eq_ignore_ascii_case("midi"))
}

/// `*.mid` / `*.midi` files directly inside `dir`, sorted by name.
pub fn midi_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_midi(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn mine_file(path: &Path, quantize: &QuantizeConfig, extraction: &ExtractionConfig) -> Result<std::result::Result<LoopRecord, Rejection>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let track = ingest(&bytes, quantize)?;
    let id = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
    Ok(mine_track(&track, extraction, &id)?)
}

pub fn build_dataset(
    dir: &Path,
    extraction: &ExtractionConfig,
    quantize: &QuantizeConfig,
    augment_mode: AugmentMode,
    seed: u64,
) -> Result<(Vec<LoopRecord>, DatasetReport)> {
    extraction.validate()?;
    let files = midi_files(dir)?;
    let outcomes: Vec<_> = files.par_iter().map(|p| (p, mine_file(p, quantize, extraction))).collect();

    let mut report = DatasetReport { files: files.len(), ..DatasetReport::default() };
    let mut accepted = Vec::new();
    for (path, outcome) in outcomes {
        match outcome {
            Ok(result) => {
                report.tally.record(&result);
                if let Ok(record) = result {
                    accepted.push(record);
                }
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push((path.display().to_string(), e.to_string()));
            }
        }
    }
    accepted.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    let before = accepted.len();
    let mut records = deduplicate(accepted, extraction.dedup_similarity);
    report.duplicates_removed = before - records.len();

    if let Some(cfg) = AugmentConfig::for_mode(augment_mode) {
        records = augment_all(records, &cfg, extraction, seed);
        report.augmented = records.len() - (before - report.duplicates_removed);
    }
    report.total = records.len();
    Ok((records, report))
}

/// Originals followed by their variants, in input order.
pub fn augment_all(records: Vec<LoopRecord>, cfg: &AugmentConfig, quality: &ExtractionConfig, seed: u64) -> Vec<LoopRecord> {
    let table = FrequencyTable::from_patterns(records.iter().map(|r| &r.pattern));
    let mut out = Vec::with_capacity(records.len() * (cfg.shifts.len() + 5));
    for r in &records {
        out.push(r.clone());
        out.extend(augment(r, cfg, quality, &table, seed));
    }
    out
}

/// Write each record as a format-0 MIDI file of the loop tiled [`SYNTH_TILES`] times.
pub fn write_midi_corpus(dir: &Path, records: &[LoopRecord]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let track = QuantizedTrack::tiled(&r.pattern, SYNTH_TILES);
            let bytes = encode_drum_roll(&track.roll, 480, r.tempo_bpm, 100);
            let path = dir.join(format!("loop_{k:05}.mid"));
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            Ok(path)
        })
        .collect()
}
