//! Loopable drum pattern generation with a bidirectional masked transformer.
//!
//! Everything in this crate is pure computation over in-memory values and
//! builds without `std`: pattern types and metrics, a standard MIDI file
//! reader with drum quantization, autocorrelation-based loop mining, the
//! transformer with its drum-specific losses, the training loop and the
//! iterative parallel decoder. File formats, the CLI and the HTTP service
//! live in the `maskbeat` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod decode;
pub mod error;
pub mod eval;
pub mod extract;
pub mod math;
pub mod metrics;
pub mod midi;
pub mod model;
pub mod pattern;
pub mod rng;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use pattern::{Cell, DrumPattern, Instrument, LoopRecord, MaskedPattern, INSTRUMENTS, STEPS};
