//! Pattern documents (version 1) and line-delimited datasets.
//!
//! ```text
//! {"version":1,"steps":32,"instruments":["kick",...],"grid":[[0,1,...],...],
//!  "tempo_bpm":120.0,"source_id":"...","genre_tag":"...","period_score":1.0}
//! ```
//!
//! Only `version`, `steps`, `instruments` and `grid` are required. Unknown
//! fields are ignored on read and never written.

use std::fs;
use std::io::Write;
use std::path::Path;

use maskbeat_core::pattern::{DrumPattern, Instrument, LoopRecord, INSTRUMENTS, STEPS};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u64 = 1;

fn instrument_names() -> Vec<&'static str> {
    Instrument::ALL.iter().map(|i| i.name()).collect()
}

fn grid_value(p: &DrumPattern) -> Value {
    Value::Array(
        (0..INSTRUMENTS)
            .map(|i| Value::Array((0..STEPS).map(|t| Value::from(u8::from(p.get(i, t)))).collect()))
            .collect(),
    )
}

fn record_object(r: &LoopRecord, with_meta: bool) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("version".into(), Value::from(FORMAT_VERSION));
    m.insert("steps".into(), Value::from(STEPS));
    m.insert("instruments".into(), Value::from(instrument_names()));
    m.insert("grid".into(), grid_value(&r.pattern));
    if with_meta {
        m.insert("tempo_bpm".into(), Value::from(r.tempo_bpm));
        m.insert("source_id".into(), Value::from(r.source_id.clone()));
        if let Some(g) = &r.genre_tag {
            m.insert("genre_tag".into(), Value::from(g.clone()));
        }
        m.insert("period_score".into(), Value::from(r.period_score));
    }
    m
}

/// One-line document for a bare pattern.
pub fn pattern_to_json(p: &DrumPattern) -> String {
    Value::Object(record_object(&LoopRecord::new(*p, ""), false)).to_string()
}

/// One-line document for a record, as stored in datasets.
pub fn record_to_json(r: &LoopRecord) -> String {
    Value::Object(record_object(r, true)).to_string()
}

/// Multi-line rendering with one grid row per line.
pub fn record_to_pretty(r: &LoopRecord, with_meta: bool) -> String {
    let obj = record_object(r, with_meta);
    let mut out = String::from("{\n");
    let n = obj.len();
    for (k, (key, value)) in obj.iter().enumerate() {
        out.push_str(&format!("  {}: ", Value::from(key.as_str())));
        if key == "grid" {
            out.push_str("[\n");
            let rows = value.as_array().map(Vec::as_slice).unwrap_or_default();
            for (i, row) in rows.iter().enumerate() {
                out.push_str("    ");
                out.push_str(&row.to_string());
                out.push_str(if i + 1 < rows.len() { ",\n" } else { "\n" });
            }
            out.push_str("  ]");
        } else {
            out.push_str(&value.to_string());
        }
        out.push_str(if k + 1 < n { ",\n" } else { "\n" });
    }
    out.push_str("}\n");
    out
}

fn field_err(context: &str, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::format(context, field, message)
}

/// Validate a 9×32 grid of 0/1 (or null when `allow_null`) and return it
/// as `Option<bool>` cells. Field names follow `grid[i][t]`.
pub fn parse_grid(value: &Value, context: &str, allow_null: bool) -> Result<[[Option<bool>; STEPS]; INSTRUMENTS]> {
    let rows = value.as_array().ok_or_else(|| field_err(context, "grid", "expected an array of rows"))?;
    if rows.len() != INSTRUMENTS {
        return Err(field_err(context, "grid", format!("expected {INSTRUMENTS} rows, got {}", rows.len())));
    }
    let mut out = [[None; STEPS]; INSTRUMENTS];
    for (i, row) in rows.iter().enumerate() {
        let cells = row.as_array().ok_or_else(|| field_err(context, format!("grid[{i}]"), "expected an array"))?;
        if cells.len() != STEPS {
            return Err(field_err(context, format!("grid[{i}]"), format!("expected {STEPS} steps, got {}", cells.len())));
        }
        for (t, cell) in cells.iter().enumerate() {
            out[i][t] = match cell.as_u64() {
                Some(0) => Some(false),
                Some(1) => Some(true),
                _ if cell.is_null() && allow_null => None,
                _ => {
                    let allowed = if allow_null { "0, 1 or null" } else { "0 or 1" };
                    return Err(field_err(context, format!("grid[{i}][{t}]"), format!("expected {allowed}, got {cell}")));
                }
            };
        }
    }
    Ok(out)
}

fn optional<'a>(obj: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    obj.get(key).filter(|v| !v.is_null())
}

/// Parse one document. Missing `source_id` becomes an empty string and a
/// missing tempo becomes 120 BPM.
pub fn parse_record(text: &str, context: &str) -> Result<LoopRecord> {
    let value: Value = serde_json::from_str(text).map_err(|e| field_err(context, "document", e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| field_err(context, "document", "expected an object"))?;

    match obj.get("version").and_then(Value::as_u64) {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(field_err(context, "version", format!("unsupported version {v}"))),
        None => return Err(field_err(context, "version", "missing or not an integer")),
    }
    match obj.get("steps").and_then(Value::as_u64) {
        Some(s) if s == STEPS as u64 => {}
        _ => return Err(field_err(context, "steps", format!("expected {STEPS}"))),
    }
    let names = obj
        .get("instruments")
        .and_then(Value::as_array)
        .ok_or_else(|| field_err(context, "instruments", "missing or not an array"))?;
    if names.len() != INSTRUMENTS {
        return Err(field_err(context, "instruments", format!("expected {INSTRUMENTS} names, got {}", names.len())));
    }
    for (k, (got, want)) in names.iter().zip(instrument_names()).enumerate() {
        if got.as_str() != Some(want) {
            return Err(field_err(context, format!("instruments[{k}]"), format!("expected \"{want}\", got {got}")));
        }
    }
    let grid = obj.get("grid").ok_or_else(|| field_err(context, "grid", "missing"))?;
    let cells = parse_grid(grid, context, false)?;
    let pattern = DrumPattern::from_fn(|i, t| cells[i][t] == Some(true));

    let number = |key: &str| -> Result<Option<f64>> {
        match optional(obj, key) {
            None => Ok(None),
            Some(v) => v.as_f64().map(Some).ok_or_else(|| field_err(context, key, "expected a number")),
        }
    };
    let text_field = |key: &str| -> Result<Option<String>> {
        match optional(obj, key) {
            None => Ok(None),
            Some(v) => v.as_str().map(|s| Some(s.to_string())).ok_or_else(|| field_err(context, key, "expected a string")),
        }
    };
    Ok(LoopRecord {
        pattern,
        tempo_bpm: number("tempo_bpm")?.unwrap_or(120.0),
        source_id: text_field("source_id")?.unwrap_or_default(),
        period_score: number("period_score")?.unwrap_or(1.0),
        genre_tag: text_field("genre_tag")?,
    })
}

pub fn parse_pattern(text: &str, context: &str) -> Result<DrumPattern> {
    parse_record(text, context).map(|r| r.pattern)
}

pub fn read_pattern_file(path: &Path) -> Result<LoopRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_record(&text, &path.display().to_string())
}

pub fn write_pattern_file(path: &Path, record: &LoopRecord, with_meta: bool) -> Result<()> {
    write_atomic(path, record_to_pretty(record, with_meta).as_bytes())
}

/// Read a dataset; blank lines are skipped and errors carry `path:line`.
pub fn read_dataset(path: &Path) -> Result<Vec<LoopRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, &path.display().to_string())
}

pub fn parse_dataset(text: &str, context: &str) -> Result<Vec<LoopRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(n, line)| parse_record(line, &format!("{context}:{}", n + 1)))
        .collect()
}

pub fn dataset_to_string(records: &[LoopRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&record_to_json(r));
        out.push('\n');
    }
    out
}

pub fn write_dataset(path: &Path, records: &[LoopRecord]) -> Result<()> {
    write_atomic(path, dataset_to_string(records).as_bytes())
}

/// Write through a temporary file in the same directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rock() -> DrumPattern {
        DrumPattern::from_fn(|i, t| (i == 0 && t % 8 == 0) || (i == 1 && t % 8 == 4) || (i == 2 && t % 2 == 0))
    }

    #[test]
    fn round_trip() {
        let r = LoopRecord { genre_tag: Some("rock".into()), ..LoopRecord::new(rock(), "a.mid") };
        assert_eq!(parse_record(&record_to_json(&r), "x").unwrap(), r);
        assert_eq!(parse_record(&record_to_pretty(&r, true), "x").unwrap(), r);
        assert_eq!(parse_pattern(&pattern_to_json(&rock()), "x").unwrap(), rock());
    }

    #[test]
    fn field_errors() {
        let good: Value = serde_json::from_str(&pattern_to_json(&rock())).unwrap();
        let check = |edit: &dyn Fn(&mut Value), field: &str| {
            let mut v = good.clone();
            edit(&mut v);
            match parse_record(&v.to_string(), "x") {
                Err(Error::Format { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected error on {field}, got {other:?}"),
            }
        };
        check(&|v| v["grid"][2].as_array_mut().unwrap().push(Value::from(0)), "grid[2]");
        check(&|v| v["grid"][3][5] = Value::from(2), "grid[3][5]");
        check(&|v| v["version"] = Value::from(2), "version");
        check(&|v| v["instruments"][1] = Value::from("clap"), "instruments[1]");
        check(&|v| v["steps"] = Value::from(64), "steps");
    }

    #[test]
    fn unknown_fields_ignored() {
        let mut v: Value = serde_json::from_str(&pattern_to_json(&rock())).unwrap();
        v["comment"] = Value::from("hello");
        assert_eq!(parse_pattern(&v.to_string(), "x").unwrap(), rock());
    }
}
