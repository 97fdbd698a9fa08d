//! Bidirectional masked transformer over 32 timesteps.
//!
//! Each timestep is embedded either as a shared learned mask vector (all nine
//! cells masked) or as a linear projection of `[values ⊕ mask flags]`. A fixed
//! sine/cosine timing signal with periods {32, 16, 8, 4, 2}, mapped through a
//! learned projection, is added to every position. The encoder is pre-norm
//! with full self-attention and a GELU feed-forward block; a linear head
//! produces nine logits per step.

mod loss;
mod network;

pub use loss::*;
pub use network::*;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::pattern::{INSTRUMENTS, STEPS};
use crate::rng;

/// Width of the per-step input: nine values followed by nine mask flags.
pub const INPUT_FEATURES: usize = 2 * INSTRUMENTS;
/// Width of the raw timing features: a sin/cos pair for each period.
pub const TIMING_FEATURES: usize = 10;
pub const TIMING_PERIODS: [usize; 5] = [32, 16, 8, 4, 2];
/// Reserved index of the mask token.
pub const MASK_TOKEN_ID: u32 = 10;

/// 9 × 32 real grid indexed `[instrument][step]`.
pub type Grid = [[f64; STEPS]; INSTRUMENTS];

pub const ZERO_GRID: Grid = [[0.0; STEPS]; INSTRUMENTS];

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    /// Feed-forward width as a multiple of `d_model`.
    pub ffn_mult: usize,
    pub dropout: f64,
    pub mask_token_id: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { d_model: 64, n_layers: 2, n_heads: 4, ffn_mult: 4, dropout: 0.1, mask_token_id: MASK_TOKEN_ID }
    }
}

impl ModelConfig {
    /// The full-size configuration: 8 layers, 8 heads, width 512.
    pub fn full() -> Self {
        ModelConfig { d_model: 512, n_layers: 8, n_heads: 8, ..Self::default() }
    }

    pub fn d_ff(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.ffn_mult == 0 {
            return Err(Error::Config(String::from("model dimensions must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Dense layer `y = x W + b` with `W` stored input-major (`in × out`).
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Linear { w: vec![0.0; fan_in * fan_out], b: vec![0.0; fan_out], fan_in, fan_out }
    }

    fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, std: f64, rng: &mut R) -> Self {
        let mut l = Self::zeros(fan_in, fan_out);
        for w in &mut l.w {
            *w = std * rng::normal(rng);
        }
        l
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl LayerNorm {
    fn new(d: usize) -> Self {
        LayerNorm { gamma: vec![1.0; d], beta: vec![0.0; d] }
    }

    fn zeros(d: usize) -> Self {
        LayerNorm { gamma: vec![0.0; d], beta: vec![0.0; d] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1: LayerNorm,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub ln2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

/// All trainable tensors. Also used as the gradient and optimizer-moment container.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub input: Linear,
    pub mask_embedding: Vec<f64>,
    /// Timing projection, `10 × d_model`, no bias.
    pub timing: Vec<f64>,
    pub layers: Vec<EncoderLayer>,
    pub final_ln: LayerNorm,
    pub head: Linear,
}

impl Weights {
    /// Random initialization: N(0, 0.02²) matrices, unit LayerNorm gains, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = rng::seeded(seed);
        let d = cfg.d_model;
        let std = 0.02;
        let input = Linear::init(INPUT_FEATURES, d, std, &mut rng);
        let mask_embedding = (0..d).map(|_| std * rng::normal(&mut rng)).collect();
        let timing = (0..TIMING_FEATURES * d).map(|_| std * rng::normal(&mut rng)).collect();
        let layers = (0..cfg.n_layers)
            .map(|_| EncoderLayer {
                ln1: LayerNorm::new(d),
                query: Linear::init(d, d, std, &mut rng),
                key: Linear::init(d, d, std, &mut rng),
                value: Linear::init(d, d, std, &mut rng),
                out: Linear::init(d, d, std, &mut rng),
                ln2: LayerNorm::new(d),
                ff1: Linear::init(d, cfg.d_ff(), std, &mut rng),
                ff2: Linear::init(cfg.d_ff(), d, std, &mut rng),
            })
            .collect();
        Ok(Weights {
            input,
            mask_embedding,
            timing,
            layers,
            final_ln: LayerNorm::new(d),
            head: Linear::init(d, INSTRUMENTS, std, &mut rng),
        })
    }

    /// Same shapes, every entry zero.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        Weights {
            input: Linear::zeros(INPUT_FEATURES, d),
            mask_embedding: vec![0.0; d],
            timing: vec![0.0; TIMING_FEATURES * d],
            layers: (0..cfg.n_layers)
                .map(|_| EncoderLayer {
                    ln1: LayerNorm::zeros(d),
                    query: Linear::zeros(d, d),
                    key: Linear::zeros(d, d),
                    value: Linear::zeros(d, d),
                    out: Linear::zeros(d, d),
                    ln2: LayerNorm::zeros(d),
                    ff1: Linear::zeros(d, cfg.d_ff()),
                    ff2: Linear::zeros(cfg.d_ff(), d),
                })
                .collect(),
            final_ln: LayerNorm::zeros(d),
            head: Linear::zeros(d, INSTRUMENTS),
        }
    }

    /// Named tensor layout `(name, shape)` in canonical order.
    pub fn layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
        let d = cfg.d_model;
        let f = cfg.d_ff();
        let mut out = vec![
            (String::from("embed.input.weight"), vec![INPUT_FEATURES, d]),
            (String::from("embed.input.bias"), vec![d]),
            (String::from("embed.mask"), vec![d]),
            (String::from("embed.timing.weight"), vec![TIMING_FEATURES, d]),
        ];
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            out.extend([
                (p("ln1.gamma"), vec![d]),
                (p("ln1.beta"), vec![d]),
                (p("attn.query.weight"), vec![d, d]),
                (p("attn.query.bias"), vec![d]),
                (p("attn.key.weight"), vec![d, d]),
                (p("attn.key.bias"), vec![d]),
                (p("attn.value.weight"), vec![d, d]),
                (p("attn.value.bias"), vec![d]),
                (p("attn.out.weight"), vec![d, d]),
                (p("attn.out.bias"), vec![d]),
                (p("ln2.gamma"), vec![d]),
                (p("ln2.beta"), vec![d]),
                (p("ffn.up.weight"), vec![d, f]),
                (p("ffn.up.bias"), vec![f]),
                (p("ffn.down.weight"), vec![f, d]),
                (p("ffn.down.bias"), vec![d]),
            ]);
        }
        out.extend([
            (String::from("final_ln.gamma"), vec![d]),
            (String::from("final_ln.beta"), vec![d]),
            (String::from("head.weight"), vec![d, INSTRUMENTS]),
            (String::from("head.bias"), vec![INSTRUMENTS]),
        ]);
        out
    }

    /// Tensors in [`Weights::layout`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.input.w, &self.input.b, &self.mask_embedding, &self.timing];
        for l in &self.layers {
            out.extend([
                &l.ln1.gamma[..],
                &l.ln1.beta,
                &l.query.w,
                &l.query.b,
                &l.key.w,
                &l.key.b,
                &l.value.w,
                &l.value.b,
                &l.out.w,
                &l.out.b,
                &l.ln2.gamma,
                &l.ln2.beta,
                &l.ff1.w,
                &l.ff1.b,
                &l.ff2.w,
                &l.ff2.b,
            ]);
        }
        out.extend([&self.final_ln.gamma[..], &self.final_ln.beta, &self.head.w, &self.head.b]);
        out
    }

    /// Mutable tensors in [`Weights::layout`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> =
            vec![&mut self.input.w, &mut self.input.b, &mut self.mask_embedding, &mut self.timing];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1.gamma[..],
                &mut l.ln1.beta,
                &mut l.query.w,
                &mut l.query.b,
                &mut l.key.w,
                &mut l.key.b,
                &mut l.value.w,
                &mut l.value.b,
                &mut l.out.w,
                &mut l.out.b,
                &mut l.ln2.gamma,
                &mut l.ln2.beta,
                &mut l.ff1.w,
                &mut l.ff1.b,
                &mut l.ff2.w,
                &mut l.ff2.b,
            ]);
        }
        out.extend([
            &mut self.final_ln.gamma[..],
            &mut self.final_ln.beta,
            &mut self.head.w,
            &mut self.head.b,
        ]);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Rebuild from named tensors, rejecting missing names or shape mismatches.
    pub fn from_named(cfg: &ModelConfig, named: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        cfg.validate()?;
        let mut w = Self::zeros(cfg);
        let layout = Self::layout(cfg);
        if named.len() != layout.len() {
            return Err(Error::Config(format!(
                "expected {} tensors for this configuration, found {}",
                layout.len(),
                named.len()
            )));
        }
        for ((name, shape), dst) in layout.iter().zip(w.tensors_mut()) {
            let Some((_, got_shape, data)) = named.iter().find(|(n, _, _)| n == name) else {
                return Err(Error::Config(format!("tensor {name}: missing")));
            };
            if got_shape != shape || data.len() != dst.len() {
                return Err(Error::Config(format!("tensor {name}: shape {got_shape:?} does not match {shape:?}")));
            }
            dst.copy_from_slice(data);
        }
        Ok(w)
    }

    pub fn fill(&mut self, value: f64) {
        for t in self.tensors_mut() {
            t.fill(value);
        }
    }

    /// Squared L2 norm over all tensors.
    pub fn norm_sq(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|x| x * x).sum()
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            for x in t.iter_mut() {
                *x *= s;
            }
        }
    }

    /// `self += s * other` (shapes must match).
    pub fn add_scaled(&mut self, other: &Weights, s: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            crate::math::axpy(s, b, a);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Raw timing features for step `t`: `[sin(2πt/P), cos(2πt/P)]` for P in {32, 16, 8, 4, 2}.
///
/// The angle is reduced modulo the period first and quarter-period points
/// are exact, so the signal at `t` and `t + 32` is bit-identical.
pub fn timing_features(t: usize) -> [f64; TIMING_FEATURES] {
    let mut out = [0.0; TIMING_FEATURES];
    for (k, &period) in TIMING_PERIODS.iter().enumerate() {
        let phase = t % period;
        let (s, c) = if (phase * 4).is_multiple_of(period) {
            match phase * 4 / period {
                0 => (0.0, 1.0),
                1 => (1.0, 0.0),
                2 => (0.0, -1.0),
                _ => (-1.0, 0.0),
            }
        } else {
            let angle = 2.0 * crate::math::PI * phase as f64 / period as f64;
            (crate::math::sin(angle), crate::math::cos(angle))
        };
        out[2 * k] = s;
        out[2 * k + 1] = c;
    }
    out
}

/// The timing signal projected to model width: `32 × d_model`, row-major.
pub fn timing_signal(weights: &Weights, d_model: usize) -> Vec<f64> {
    let mut out = vec![0.0; STEPS * d_model];
    for t in 0..STEPS {
        let f = timing_features(t);
        let row = &mut out[t * d_model..(t + 1) * d_model];
        for (k, fk) in f.iter().enumerate() {
            crate::math::axpy(*fk, &weights.timing[k * d_model..(k + 1) * d_model], row);
        }
    }
    out
}
