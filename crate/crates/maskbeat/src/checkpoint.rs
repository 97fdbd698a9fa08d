//! Binary checkpoint: `MBEATCKP`, u32 LE manifest length, JSON manifest,
//! then every tensor as little-endian f64 in manifest order.

use std::fs;
use std::path::Path;

use maskbeat_core::model::{LossConfig, LossMix, ModelConfig, Weights};
use maskbeat_core::pattern::{LoopRecord, STEPS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::format::{dataset_to_string, write_atomic};

pub const MAGIC: &[u8; 8] = b"MBEATCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfigDoc {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub mask_token_id: u32,
}

impl From<&ModelConfig> for ModelConfigDoc {
    fn from(c: &ModelConfig) -> Self {
        ModelConfigDoc {
            d_model: c.d_model,
            n_layers: c.n_layers,
            n_heads: c.n_heads,
            ffn_mult: c.ffn_mult,
            dropout: c.dropout,
            mask_token_id: c.mask_token_id,
        }
    }
}

impl From<&ModelConfigDoc> for ModelConfig {
    fn from(d: &ModelConfigDoc) -> Self {
        ModelConfig {
            d_model: d.d_model,
            n_layers: d.n_layers,
            n_heads: d.n_heads,
            ffn_mult: d.ffn_mult,
            dropout: d.dropout,
            mask_token_id: d.mask_token_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfigDoc {
    pub lambda_ks: f64,
    pub lambda_hh: f64,
    pub lambda_tom: f64,
    pub tom_term: bool,
    pub beta: f64,
    pub step_weights: Vec<f64>,
    pub gamma: f64,
    pub alpha_pos: f64,
    pub mix: [f64; 3],
}

impl From<&LossConfig> for LossConfigDoc {
    fn from(c: &LossConfig) -> Self {
        LossConfigDoc {
            lambda_ks: c.lambda_ks,
            lambda_hh: c.lambda_hh,
            lambda_tom: c.lambda_tom,
            tom_term: c.tom_term,
            beta: c.beta,
            step_weights: c.step_weights.to_vec(),
            gamma: c.gamma,
            alpha_pos: c.alpha_pos,
            mix: [c.mix.focal, c.mix.dependency, c.mix.groove],
        }
    }
}

impl LossConfigDoc {
    pub fn to_config(&self) -> Option<LossConfig> {
        let step_weights: [f64; STEPS] = self.step_weights.clone().try_into().ok()?;
        Some(LossConfig {
            lambda_ks: self.lambda_ks,
            lambda_hh: self.lambda_hh,
            lambda_tom: self.lambda_tom,
            tom_term: self.tom_term,
            beta: self.beta,
            step_weights,
            gamma: self.gamma,
            alpha_pos: self.alpha_pos,
            mix: LossMix { focal: self.mix[0], dependency: self.mix[1], groove: self.mix[2] },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub model: ModelConfigDoc,
    pub loss: LossConfigDoc,
    /// Epochs run and the epoch whose weights were kept.
    pub epochs_trained: usize,
    pub best_epoch: usize,
    pub seed: u64,
    pub corpus_fingerprint: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub model: ModelConfig,
    pub weights: Weights,
}

/// sha256 of the dataset's canonical line-delimited form.
pub fn corpus_fingerprint(records: &[LoopRecord]) -> String {
    hex::encode(Sha256::digest(dataset_to_string(records).as_bytes()))
}

impl Checkpoint {
    pub fn new(
        model: &ModelConfig,
        loss: &LossConfig,
        weights: Weights,
        epochs_trained: usize,
        best_epoch: usize,
        seed: u64,
        corpus_fingerprint: String,
    ) -> Self {
        let tensors =
            Weights::layout(model).into_iter().map(|(name, shape)| TensorEntry { name, shape }).collect();
        Checkpoint {
            manifest: Manifest {
                version: CHECKPOINT_VERSION,
                model: model.into(),
                loss: loss.into(),
                epochs_trained,
                best_epoch,
                seed,
                corpus_fingerprint,
                tensors,
            },
            model: model.clone(),
            weights,
        }
    }

    fn manifest_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.manifest).expect("manifest serializes")
    }

    /// sha256 of the manifest bytes, reported by the service health check.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.manifest_bytes()))
    }

    pub fn loss_config(&self) -> Option<LossConfig> {
        self.manifest.loss.to_config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let manifest = self.manifest_bytes();
        let mut out = Vec::with_capacity(12 + manifest.len() + self.weights.parameter_count() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
        out.extend_from_slice(&manifest);
        for tensor in self.weights.tensors() {
            for x in tensor {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |message: String| Error::Checkpoint { path: path.to_path_buf(), message };
        if bytes.len() < 12 || &bytes[..8] != MAGIC {
            return Err(bad("not a maskbeat checkpoint (bad magic)".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(12..12 + len).ok_or_else(|| bad("truncated manifest".into()))?;
        let manifest: Manifest = serde_json::from_slice(body).map_err(|e| bad(format!("manifest: {e}")))?;
        if manifest.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", manifest.version)));
        }
        let model = ModelConfig::from(&manifest.model);
        model.validate().map_err(|e| bad(e.to_string()))?;
        if manifest.loss.to_config().is_none() {
            return Err(bad(format!("loss.step_weights: expected {STEPS} values")));
        }
        let layout = Weights::layout(&model);
        if manifest.tensors.len() != layout.len() {
            return Err(bad(format!("expected {} tensors, manifest lists {}", layout.len(), manifest.tensors.len())));
        }
        for (entry, (name, shape)) in manifest.tensors.iter().zip(&layout) {
            if &entry.name != name {
                return Err(bad(format!("tensor {}: expected {name} at this position", entry.name)));
            }
            if &entry.shape != shape {
                return Err(bad(format!("tensor {name}: shape {:?} does not match {shape:?}", entry.shape)));
            }
        }
        let mut payload = &bytes[12 + len..];
        let mut named = Vec::with_capacity(manifest.tensors.len());
        for entry in &manifest.tensors {
            let n: usize = entry.shape.iter().product();
            if payload.len() < n * 8 {
                return Err(bad(format!("tensor {}: payload truncated", entry.name)));
            }
            let data = payload[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            payload = &payload[n * 8..];
            named.push((entry.name.clone(), entry.shape.clone(), data));
        }
        if !payload.is_empty() {
            return Err(bad(format!("{} trailing bytes after tensors", payload.len())));
        }
        let weights = Weights::from_named(&model, &named).map_err(|e| bad(e.to_string()))?;
        Ok(Checkpoint { manifest, model, weights })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
