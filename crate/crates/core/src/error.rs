use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("midi parse error at byte {offset}: {message}")]
    Midi { offset: usize, message: String },
    #[error("no drum track (no events on channel 10)")]
    NoDrumTrack,
    #[error("empty track: activation vector is all zero")]
    EmptyTrack,
    #[error("track too short: {steps} steps, need at least {required}")]
    TrackTooShort { steps: usize, required: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    Request(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch} (grad norm {grad_norm})")]
    NonFiniteLoss { epoch: usize, batch: usize, grad_norm: f64 },
}
