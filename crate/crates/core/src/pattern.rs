//! Canonical drum pattern types.
//!
//! A [`DrumPattern`] is a 9 × 32 binary grid: nine instrument rows, 32
//! sixteenth-note steps (two bars of 16). Each row is stored as a `u32`
//! bitmask with bit `t` set when the instrument plays at step `t`.

use alloc::string::String;
use core::fmt;

/// Number of instrument classes.
pub const INSTRUMENTS: usize = 9;
/// Steps per pattern (two bars of sixteenth notes).
pub const STEPS: usize = 32;
/// Steps per bar.
pub const BAR_STEPS: usize = 16;
/// Total cells in a pattern.
pub const CELLS: usize = INSTRUMENTS * STEPS;

/// The nine instrument classes in their frozen order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Instrument {
    Kick = 0,
    Snare = 1,
    ClosedHiHat = 2,
    OpenHiHat = 3,
    LowTom = 4,
    MidTom = 5,
    HighTom = 6,
    Crash = 7,
    Ride = 8,
}

impl Instrument {
    pub const ALL: [Instrument; INSTRUMENTS] = [
        Instrument::Kick,
        Instrument::Snare,
        Instrument::ClosedHiHat,
        Instrument::OpenHiHat,
        Instrument::LowTom,
        Instrument::MidTom,
        Instrument::HighTom,
        Instrument::Crash,
        Instrument::Ride,
    ];

    pub const TOMS: [Instrument; 3] = [Instrument::LowTom, Instrument::MidTom, Instrument::HighTom];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Instrument> {
        Self::ALL.get(i).copied()
    }

    /// Stable name used by file formats, the CLI and the HTTP API.
    pub fn name(self) -> &'static str {
        match self {
            Instrument::Kick => "kick",
            Instrument::Snare => "snare",
            Instrument::ClosedHiHat => "closed_hihat",
            Instrument::OpenHiHat => "open_hihat",
            Instrument::LowTom => "low_tom",
            Instrument::MidTom => "mid_tom",
            Instrument::HighTom => "high_tom",
            Instrument::Crash => "crash",
            Instrument::Ride => "ride",
        }
    }

    pub fn from_name(name: &str) -> Option<Instrument> {
        Self::ALL.iter().copied().find(|i| i.name() == name)
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A 9 × 32 binary drum grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct DrumPattern {
    rows: [u32; INSTRUMENTS],
}

impl DrumPattern {
    pub const fn empty() -> Self {
        DrumPattern { rows: [0; INSTRUMENTS] }
    }

    pub const fn from_rows(rows: [u32; INSTRUMENTS]) -> Self {
        DrumPattern { rows }
    }

    /// Build from a cell predicate `f(instrument_index, step)`.
    pub fn from_fn(mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut p = Self::empty();
        for i in 0..INSTRUMENTS {
            for t in 0..STEPS {
                if f(i, t) {
                    p.rows[i] |= 1 << t;
                }
            }
        }
        p
    }

    /// Build from a list of `(instrument, step)` hits.
    pub fn from_hits<I: IntoIterator<Item = (Instrument, usize)>>(hits: I) -> Self {
        let mut p = Self::empty();
        for (inst, t) in hits {
            p.set(inst.index(), t, true);
        }
        p
    }

    #[inline]
    pub fn rows(&self) -> &[u32; INSTRUMENTS] {
        &self.rows
    }

    #[inline]
    pub fn row(&self, instrument: usize) -> u32 {
        self.rows[instrument]
    }

    #[inline]
    pub fn get(&self, instrument: usize, step: usize) -> bool {
        self.rows[instrument] >> step & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, instrument: usize, step: usize, on: bool) {
        assert!(instrument < INSTRUMENTS && step < STEPS, "cell ({instrument}, {step}) out of range");
        if on {
            self.rows[instrument] |= 1 << step;
        } else {
            self.rows[instrument] &= !(1 << step);
        }
    }

    pub fn hit_count(&self) -> usize {
        self.rows.iter().map(|r| r.count_ones() as usize).sum()
    }

    /// Active cells / 288.
    pub fn density(&self) -> f64 {
        self.hit_count() as f64 / CELLS as f64
    }

    pub fn is_empty(&self) -> bool {
        self.rows.iter().all(|&r| r == 0)
    }

    /// Count of cells active in both patterns.
    pub fn intersection_count(&self, other: &DrumPattern) -> usize {
        self.rows.iter().zip(&other.rows).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }

    /// Count of cells active in either pattern.
    pub fn union_count(&self, other: &DrumPattern) -> usize {
        self.rows.iter().zip(&other.rows).map(|(a, b)| (a | b).count_ones() as usize).sum()
    }

    /// Circular shift to the right by `k` steps (`t -> t + k mod 32`).
    pub fn rotate(&self, k: usize) -> DrumPattern {
        let k = (k % STEPS) as u32;
        let mut rows = self.rows;
        for r in rows.iter_mut() {
            *r = r.rotate_left(k);
        }
        DrumPattern { rows }
    }

    /// Bitmask of the steps where any instrument plays.
    pub fn downmix(&self) -> u32 {
        self.rows.iter().fold(0, |acc, r| acc | r)
    }

    /// Bar `m` (0 or 1) as a 16-bit mask per instrument.
    pub fn bar(&self, m: usize) -> [u16; INSTRUMENTS] {
        let mut out = [0u16; INSTRUMENTS];
        for (o, r) in out.iter_mut().zip(&self.rows) {
            *o = (r >> (m * BAR_STEPS)) as u16;
        }
        out
    }

    /// Iterate active cells as `(instrument_index, step)`.
    pub fn hits(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..INSTRUMENTS).flat_map(move |i| (0..STEPS).filter(move |&t| self.get(i, t)).map(move |t| (i, t)))
    }

    /// Grid as 9 rows of 32 `0/1` bytes.
    pub fn to_grid(&self) -> [[u8; STEPS]; INSTRUMENTS] {
        let mut g = [[0u8; STEPS]; INSTRUMENTS];
        for (i, row) in g.iter_mut().enumerate() {
            for (t, c) in row.iter_mut().enumerate() {
                *c = u8::from(self.get(i, t));
            }
        }
        g
    }

    pub fn from_grid(grid: &[[u8; STEPS]; INSTRUMENTS]) -> Self {
        Self::from_fn(|i, t| grid[i][t] != 0)
    }
}

impl fmt::Display for DrumPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for inst in Instrument::ALL {
            write!(f, "{:>12} ", inst.name())?;
            for t in 0..STEPS {
                if t > 0 && t % 4 == 0 {
                    f.write_str(if t % BAR_STEPS == 0 { "|" } else { " " })?;
                }
                f.write_str(if self.get(inst.index(), t) { "x" } else { "." })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// State of one cell in a [`MaskedPattern`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cell {
    Hit,
    Silent,
    Masked,
}

/// Tri-state grid with lock flags: decoder and training input.
///
/// Locked cells always carry a value, never `Masked`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct MaskedPattern {
    hits: [u32; INSTRUMENTS],
    masked: [u32; INSTRUMENTS],
    locks: [u32; INSTRUMENTS],
}

impl MaskedPattern {
    /// Every cell masked, nothing locked.
    pub fn fully_masked() -> Self {
        MaskedPattern { hits: [0; INSTRUMENTS], masked: [u32::MAX; INSTRUMENTS], locks: [0; INSTRUMENTS] }
    }

    /// Every cell known, nothing locked.
    pub fn from_pattern(p: &DrumPattern) -> Self {
        MaskedPattern { hits: *p.rows(), masked: [0; INSTRUMENTS], locks: [0; INSTRUMENTS] }
    }

    #[inline]
    pub fn cell(&self, instrument: usize, step: usize) -> Cell {
        let bit = 1u32 << step;
        if self.masked[instrument] & bit != 0 {
            Cell::Masked
        } else if self.hits[instrument] & bit != 0 {
            Cell::Hit
        } else {
            Cell::Silent
        }
    }

    /// Set a cell's state. Masking a locked cell is refused.
    pub fn set_cell(&mut self, instrument: usize, step: usize, cell: Cell) -> crate::Result<()> {
        let bit = 1u32 << step;
        if instrument >= INSTRUMENTS || step >= STEPS {
            return Err(crate::Error::Request(alloc::format!("cell ({instrument}, {step}) out of range")));
        }
        match cell {
            Cell::Masked => {
                if self.locks[instrument] & bit != 0 {
                    return Err(crate::Error::Request(alloc::format!(
                        "cell ({instrument}, {step}) is locked and cannot be masked"
                    )));
                }
                self.masked[instrument] |= bit;
                self.hits[instrument] &= !bit;
            }
            Cell::Hit => {
                self.masked[instrument] &= !bit;
                self.hits[instrument] |= bit;
            }
            Cell::Silent => {
                self.masked[instrument] &= !bit;
                self.hits[instrument] &= !bit;
            }
        }
        Ok(())
    }

    #[inline]
    pub fn is_masked(&self, instrument: usize, step: usize) -> bool {
        self.masked[instrument] >> step & 1 == 1
    }

    #[inline]
    pub fn is_locked(&self, instrument: usize, step: usize) -> bool {
        self.locks[instrument] >> step & 1 == 1
    }

    /// Lock a cell. Fails if the cell is currently masked.
    pub fn lock(&mut self, instrument: usize, step: usize) -> crate::Result<()> {
        if self.is_masked(instrument, step) {
            return Err(crate::Error::Request(alloc::format!(
                "cell ({instrument}, {step}) is masked and cannot be locked"
            )));
        }
        self.locks[instrument] |= 1 << step;
        Ok(())
    }

    pub fn unlock(&mut self, instrument: usize, step: usize) {
        self.locks[instrument] &= !(1 << step);
    }

    pub fn masked_rows(&self) -> &[u32; INSTRUMENTS] {
        &self.masked
    }

    pub fn lock_rows(&self) -> &[u32; INSTRUMENTS] {
        &self.locks
    }

    /// Known hit values (masked cells read as 0).
    pub fn hit_rows(&self) -> &[u32; INSTRUMENTS] {
        &self.hits
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().map(|r| r.count_ones() as usize).sum()
    }

    /// True when all nine cells of step `t` are masked.
    pub fn step_fully_masked(&self, step: usize) -> bool {
        self.masked.iter().all(|r| r >> step & 1 == 1)
    }

    /// Resolve masked cells with `fill`; known cells keep their values.
    pub fn resolve(&self, fill: &DrumPattern) -> DrumPattern {
        let mut rows = [0u32; INSTRUMENTS];
        for (i, r) in rows.iter_mut().enumerate() {
            *r = (self.hits[i] & !self.masked[i]) | (fill.row(i) & self.masked[i]);
        }
        DrumPattern::from_rows(rows)
    }

    /// The pattern with masked cells read as silent.
    pub fn known(&self) -> DrumPattern {
        self.resolve(&DrumPattern::empty())
    }
}

/// One dataset row: a loop plus its source metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopRecord {
    pub pattern: DrumPattern,
    pub tempo_bpm: f64,
    pub source_id: String,
    /// Normalized autocorrelation at the accepted period (1.0 for a perfect synthetic loop).
    pub period_score: f64,
    pub genre_tag: Option<String>,
}

impl LoopRecord {
    pub fn new(pattern: DrumPattern, source_id: impl Into<String>) -> Self {
        LoopRecord { pattern, tempo_bpm: 120.0, source_id: source_id.into(), period_score: 1.0, genre_tag: None }
    }
}
