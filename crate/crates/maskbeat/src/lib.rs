//! Files, processes and sockets around `maskbeat-core`: pattern and dataset
//! documents, checkpoints, the MIDI-to-dataset pipeline, the ablation
//! harness, the command line and the HTTP service.

pub mod ablation;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod format;
pub mod service;

pub use error::{Error, Result};
