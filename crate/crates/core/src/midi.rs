//! Standard MIDI file reading, drum isolation and sixteenth-note quantization.
//!
//! Formats 0 and 1 are supported. Only note-on events (velocity > 0) and
//! tempo meta events are retained; everything else is skipped.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::pattern::{DrumPattern, Instrument, INSTRUMENTS, STEPS};

/// MIDI channel index carrying General MIDI percussion (channel 10).
pub const DRUM_CHANNEL: u8 = 9;
pub const DEFAULT_VELOCITY_THRESHOLD: u8 = 20;
pub const DEFAULT_TEMPO_US: u32 = 500_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RawNoteEvent {
    pub tick: u64,
    pub note: u8,
    pub velocity: u8,
    pub channel: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TempoChange {
    pub tick: u64,
    /// Microseconds per quarter note.
    pub micros_per_quarter: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Track {
    pub events: Vec<RawNoteEvent>,
    /// Tick of the last event in the track (end-of-track included).
    pub end_tick: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MidiFile {
    pub format: u16,
    pub ticks_per_quarter: u16,
    pub tracks: Vec<Track>,
    /// Tempo changes from all tracks, sorted by tick.
    pub tempo_map: Vec<TempoChange>,
}

impl MidiFile {
    pub fn end_tick(&self) -> u64 {
        self.tracks.iter().map(|t| t.end_tick).max().unwrap_or(0)
    }

    /// Tempo of the first tempo event, or 120 bpm if there is none.
    pub fn initial_bpm(&self) -> f64 {
        let us = self.tempo_map.first().map_or(DEFAULT_TEMPO_US, |t| t.micros_per_quarter);
        60_000_000.0 / f64::from(us.max(1))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err<T>(&self, offset: usize, message: &str) -> Result<T> {
        Err(Error::Midi { offset, message: message.to_string() })
    }

    fn u8(&mut self) -> Result<u8> {
        match self.bytes.get(self.pos) {
            Some(b) => {
                self.pos += 1;
                Ok(*b)
            }
            None => self.err(self.pos, "unexpected end of data"),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return self.err(self.pos, "truncated data");
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32> {
        let start = self.pos;
        let mut v: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            v = (v << 7) | u32::from(b & 0x7f);
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        self.err(start, "variable-length quantity longer than 4 bytes")
    }
}

/// Parse a standard MIDI file.
pub fn parse_midi(bytes: &[u8]) -> Result<MidiFile> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < 4 || &bytes[..4] != b"MThd" {
        return r.err(0, "missing MThd header magic");
    }
    r.pos = 4;
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return r.err(4, "header chunk shorter than 6 bytes");
    }
    let header_start = r.pos;
    let format = r.u16()?;
    let ntracks = r.u16()?;
    let division_offset = r.pos;
    let division = r.u16()?;
    if format > 1 {
        return r.err(header_start, "only format 0 and 1 files are supported");
    }
    if division == 0 {
        return r.err(division_offset, "division is zero");
    }
    if division & 0x8000 != 0 {
        return r.err(division_offset, "SMPTE time division is not supported");
    }
    r.pos = header_start;
    r.take(header_len)?;

    let mut tracks = Vec::with_capacity(usize::from(ntracks));
    let mut tempo_map = Vec::new();
    while r.pos < bytes.len() && tracks.len() < usize::from(ntracks) {
        let chunk_start = r.pos;
        let id = r.take(4)?;
        let len = r.u32()? as usize;
        if bytes.len() - r.pos < len {
            return r.err(chunk_start, "truncated chunk");
        }
        let body_start = r.pos;
        r.pos += len;
        if id != b"MTrk" {
            continue;
        }
        let track = parse_track(bytes, body_start, body_start + len, &mut tempo_map)?;
        tracks.push(track);
    }
    if tracks.len() < usize::from(ntracks) {
        return r.err(r.pos, "fewer track chunks than declared in the header");
    }
    tempo_map.sort_by_key(|t: &TempoChange| t.tick);
    Ok(MidiFile { format, ticks_per_quarter: division, tracks, tempo_map })
}

fn parse_track(bytes: &[u8], start: usize, end: usize, tempo_map: &mut Vec<TempoChange>) -> Result<Track> {
    let mut r = Reader { bytes: &bytes[..end], pos: start };
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut events = Vec::new();
    while r.pos < end {
        tick += u64::from(r.vlq()?);
        let status_pos = r.pos;
        let first = r.u8()?;
        let (status, first_data) = if first & 0x80 != 0 {
            (first, None)
        } else {
            match running {
                Some(s) => (s, Some(first)),
                None => return r.err(status_pos, "data byte without running status"),
            }
        };
        match status {
            0xFF => {
                running = None;
                let kind = r.u8()?;
                let len = r.vlq()? as usize;
                let data = r.take(len)?;
                if kind == 0x51 && len == 3 {
                    let us = u32::from(data[0]) << 16 | u32::from(data[1]) << 8 | u32::from(data[2]);
                    tempo_map.push(TempoChange { tick, micros_per_quarter: us });
                }
                if kind == 0x2F {
                    break;
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = r.vlq()? as usize;
                r.take(len)?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let channel = status & 0x0f;
                let kind = status & 0xf0;
                let d1 = match first_data {
                    Some(b) => b,
                    None => r.u8()?,
                };
                let two_bytes = !matches!(kind, 0xC0 | 0xD0);
                let d2 = if two_bytes { r.u8()? } else { 0 };
                if d1 & 0x80 != 0 || d2 & 0x80 != 0 {
                    return r.err(status_pos, "data byte with high bit set");
                }
                if kind == 0x90 && d2 > 0 {
                    events.push(RawNoteEvent { tick, note: d1, velocity: d2, channel });
                }
            }
            _ => return r.err(status_pos, "unsupported system message"),
        }
    }
    events.sort_by_key(|e| e.tick);
    Ok(Track { events, end_tick: tick })
}

/// Events on channel 10 across all tracks, merged and sorted by tick.
pub fn isolate_drum_track(tracks: &[Track]) -> Result<Vec<RawNoteEvent>> {
    let mut out: Vec<RawNoteEvent> =
        tracks.iter().flat_map(|t| t.events.iter().copied()).filter(|e| e.channel == DRUM_CHANNEL).collect();
    if out.is_empty() {
        return Err(Error::NoDrumTrack);
    }
    out.sort_by_key(|e| e.tick);
    Ok(out)
}

/// General MIDI percussion note to instrument class.
pub fn map_gm_to_class(note: u8) -> Option<Instrument> {
    use Instrument::*;
    Some(match note {
        35 | 36 => Kick,
        37..=40 => Snare,
        42 | 44 => ClosedHiHat,
        46 => OpenHiHat,
        41 | 43 | 45 => LowTom,
        47 | 48 => MidTom,
        50 => HighTom,
        49 | 52 | 55 | 57 => Crash,
        51 | 53 | 59 => Ride,
        _ => return None,
    })
}

/// Note-to-class table, overridable per note.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DrumMap {
    table: [Option<Instrument>; 128],
}

impl Default for DrumMap {
    fn default() -> Self {
        let mut table = [None; 128];
        for (n, slot) in table.iter_mut().enumerate() {
            *slot = map_gm_to_class(n as u8);
        }
        DrumMap { table }
    }
}

impl DrumMap {
    pub fn get(&self, note: u8) -> Option<Instrument> {
        self.table.get(usize::from(note)).copied().flatten()
    }

    pub fn set(&mut self, note: u8, class: Option<Instrument>) {
        if let Some(slot) = self.table.get_mut(usize::from(note)) {
            *slot = class;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizeConfig {
    pub velocity_threshold: u8,
    /// Estimate and honour swing; when false onsets snap to the straight grid.
    pub swing: bool,
    pub drum_map: DrumMap,
}

impl Default for QuantizeConfig {
    fn default() -> Self {
        QuantizeConfig { velocity_threshold: DEFAULT_VELOCITY_THRESHOLD, swing: true, drum_map: DrumMap::default() }
    }
}

/// A 9 × T binary roll on the sixteenth-note grid.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTrack {
    /// `roll[instrument][step]`.
    pub roll: Vec<Vec<bool>>,
    pub tempo_bpm: f64,
    /// Position of the off-beat sixteenth inside an eighth note: 0.5 straight, 2/3 triplet swing.
    pub swing_ratio: f64,
}

impl QuantizedTrack {
    pub fn steps(&self) -> usize {
        self.roll.first().map_or(0, Vec::len)
    }

    /// Build from a pattern tiled `times` times.
    pub fn tiled(p: &DrumPattern, times: usize) -> Self {
        let t = STEPS * times;
        let roll = (0..INSTRUMENTS).map(|i| (0..t).map(|s| p.get(i, s % STEPS)).collect()).collect();
        QuantizedTrack { roll, tempo_bpm: 120.0, swing_ratio: 0.5 }
    }

    /// Columns `[start, start + 32)` as a pattern.
    pub fn window(&self, start: usize) -> Option<DrumPattern> {
        if start + STEPS > self.steps() {
            return None;
        }
        Some(DrumPattern::from_fn(|i, t| self.roll[i][start + t]))
    }
}

const SWING_MIN: f64 = 0.5;
const SWING_MAX: f64 = 0.75;
// Onsets whose relative position inside an eighth falls in this band are
// treated as off-beat sixteenths when estimating swing.
const OFFBEAT_BAND: (f64, f64) = (0.3, 0.85);

/// Median relative position of off-beat onsets within their eighth note,
/// clamped to [0.5, 0.75]; 0.5 when there are none.
pub fn estimate_swing(ticks: &[u64], ticks_per_quarter: u16) -> f64 {
    let eighth = f64::from(ticks_per_quarter) / 2.0;
    let mut rel: Vec<f64> = ticks
        .iter()
        .map(|&t| {
            let x = t as f64 / eighth;
            x - crate::math::floor(x)
        })
        .filter(|&f| f >= OFFBEAT_BAND.0 && f <= OFFBEAT_BAND.1)
        .collect();
    if rel.is_empty() {
        return SWING_MIN;
    }
    rel.sort_by(f64::total_cmp);
    let n = rel.len();
    let median = if n % 2 == 1 { rel[n / 2] } else { (rel[n / 2 - 1] + rel[n / 2]) / 2.0 };
    median.clamp(SWING_MIN, SWING_MAX)
}

/// Snap a tick to the nearest slot of the (possibly swung) sixteenth grid.
fn snap(tick: u64, ticks_per_quarter: u16, swing_ratio: f64) -> usize {
    let eighth = f64::from(ticks_per_quarter) / 2.0;
    let x = tick as f64 / eighth;
    let base = crate::math::floor(x);
    let frac = x - base;
    let candidates = [(0.0, 0usize), (swing_ratio, 1), (1.0, 2)];
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if (frac - c.0).abs() < (frac - best.0).abs() {
            best = *c;
        }
    }
    base as usize * 2 + best.1
}

/// Quantize drum events onto a 9 × T sixteenth-note roll.
///
/// `end_tick` is the track duration; T = ceil(end_tick / sixteenth), at least 32
/// and large enough to hold every snapped onset.
pub fn quantize(
    events: &[RawNoteEvent],
    ticks_per_quarter: u16,
    end_tick: u64,
    tempo_bpm: f64,
    cfg: &QuantizeConfig,
) -> Result<QuantizedTrack> {
    if ticks_per_quarter == 0 {
        return Err(Error::Config("ticks per quarter must be positive".to_string()));
    }
    if cfg.velocity_threshold == 0 || cfg.velocity_threshold > 127 {
        return Err(Error::Config(format!("velocity threshold {} outside 1..=127", cfg.velocity_threshold)));
    }
    let mapped: Vec<(u64, Instrument, u8)> = events
        .iter()
        .filter_map(|e| cfg.drum_map.get(e.note).map(|inst| (e.tick, inst, e.velocity)))
        .collect();
    let swing_ratio = if cfg.swing {
        let ticks: Vec<u64> = mapped.iter().map(|m| m.0).collect();
        estimate_swing(&ticks, ticks_per_quarter)
    } else {
        SWING_MIN
    };
    let sixteenth = f64::from(ticks_per_quarter) / 4.0;
    let mut steps = crate::math::ceil(end_tick as f64 / sixteenth) as usize;
    let slots: Vec<(usize, Instrument, u8)> =
        mapped.iter().map(|&(tick, inst, vel)| (snap(tick, ticks_per_quarter, swing_ratio), inst, vel)).collect();
    if let Some(max_slot) = slots.iter().map(|s| s.0).max() {
        steps = steps.max(max_slot + 1);
    }
    steps = steps.max(STEPS);
    let mut roll = vec![vec![false; steps]; INSTRUMENTS];
    for (slot, inst, vel) in slots {
        if vel >= cfg.velocity_threshold {
            roll[inst.index()][slot] = true;
        }
    }
    Ok(QuantizedTrack { roll, tempo_bpm, swing_ratio })
}

/// Parse, isolate the drum channel and quantize in one step.
pub fn ingest(bytes: &[u8], cfg: &QuantizeConfig) -> Result<QuantizedTrack> {
    let file = parse_midi(bytes)?;
    let drums = isolate_drum_track(&file.tracks)?;
    quantize(&drums, file.ticks_per_quarter, file.end_tick(), file.initial_bpm(), cfg)
}

fn push_vlq(out: &mut Vec<u8>, mut v: u32) {
    let mut buf = [0u8; 4];
    let mut n = 0;
    loop {
        buf[n] = (v & 0x7f) as u8;
        n += 1;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    for k in (0..n).rev() {
        out.push(buf[k] | if k > 0 { 0x80 } else { 0 });
    }
}

/// Representative GM note per class, used when rendering rolls to MIDI.
pub fn class_note(inst: Instrument) -> u8 {
    use Instrument::*;
    match inst {
        Kick => 36,
        Snare => 38,
        ClosedHiHat => 42,
        OpenHiHat => 46,
        LowTom => 45,
        MidTom => 47,
        HighTom => 50,
        Crash => 49,
        Ride => 51,
    }
}

/// Render a roll as a single-track format-0 file on channel 10.
///
/// Test fixtures and synthetic corpora use this; it writes only note-on/off,
/// one tempo event and end-of-track.
pub fn encode_drum_roll(roll: &[Vec<bool>], ticks_per_quarter: u16, bpm: f64, velocity: u8) -> Vec<u8> {
    let sixteenth = u32::from(ticks_per_quarter / 4).max(1);
    let steps = roll.first().map_or(0, Vec::len);
    let mut body = Vec::new();
    let us = crate::math::round(60_000_000.0 / bpm) as u32;
    body.extend_from_slice(&[0x00, 0xFF, 0x51, 0x03, (us >> 16) as u8, (us >> 8) as u8, us as u8]);
    let mut last_tick: u32 = 0;
    for t in 0..steps {
        let tick = t as u32 * sixteenth;
        let mut first = true;
        for (i, row) in roll.iter().enumerate() {
            if row[t] {
                let delta = if first { tick - last_tick } else { 0 };
                push_vlq(&mut body, delta);
                body.extend_from_slice(&[0x99, class_note(Instrument::ALL[i]), velocity]);
                first = false;
            }
        }
        if !first {
            last_tick = tick;
        }
        let off_tick = tick + sixteenth / 2;
        let mut first = true;
        for (i, row) in roll.iter().enumerate() {
            if row[t] {
                let delta = if first { off_tick - last_tick } else { 0 };
                push_vlq(&mut body, delta);
                body.extend_from_slice(&[0x89, class_note(Instrument::ALL[i]), 0]);
                first = false;
            }
        }
        if !first {
            last_tick = off_tick;
        }
    }
    let end = steps as u32 * sixteenth;
    push_vlq(&mut body, end - last_tick);
    body.extend_from_slice(&[0xFF, 0x2F, 0x00]);

    let mut out = Vec::with_capacity(body.len() + 22);
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&ticks_per_quarter.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}
