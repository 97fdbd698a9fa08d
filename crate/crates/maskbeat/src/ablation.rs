//! Loss-ablation harness: every (variant, seed) pair trains independently,
//! possibly on several threads; the report is assembled in job order.

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use maskbeat_core::eval::{run_variant, Variant, VariantResult};
use maskbeat_core::model::{LossConfig, ModelConfig};
use maskbeat_core::pattern::LoopRecord;
use maskbeat_core::train::TrainConfig;
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub n_generate: usize,
    /// 0 = one per available core.
    pub threads: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            variants: Variant::ALL.to_vec(),
            seeds: vec![1, 2, 3],
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            n_generate: 200,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: &'static str,
    pub seed: u64,
    pub beat_strength: f64,
    pub pattern_repetition: f64,
    pub instrument_balance: f64,
    pub hihat_coactivation: f64,
    pub initial_val_focal: f64,
    pub final_val_focal: f64,
}

impl AblationRow {
    fn from_result(r: &VariantResult) -> Self {
        let curve = &r.outcome.curve;
        AblationRow {
            variant: r.variant.name(),
            seed: r.seed,
            beat_strength: r.metrics.mean.beat_strength,
            pattern_repetition: r.metrics.mean.pattern_repetition,
            instrument_balance: r.metrics.mean.instrument_balance,
            hihat_coactivation: r.hihat_coactivation,
            initial_val_focal: curve.first().map_or(f64::NAN, |e| e.val.focal),
            final_val_focal: curve.last().map_or(f64::NAN, |e| e.val.focal),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    /// Per-variant means over seeds, in variant order.
    pub means: Vec<AblationRow>,
}

impl AblationReport {
    pub fn mean_for(&self, variant: Variant) -> Option<&AblationRow> {
        self.means.iter().find(|r| r.variant == variant.name())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>6} {:>8} {:>8} {:>8} {:>10} {:>10}", "variant", "seed", "beat", "repeat", "balance", "chh&ohh", "val_focal")?;
        let line = |f: &mut fmt::Formatter<'_>, r: &AblationRow, seed: &str| {
            writeln!(
                f,
                "{:<10} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>10.5} {:>10.5}",
                r.variant, seed, r.beat_strength, r.pattern_repetition, r.instrument_balance, r.hihat_coactivation, r.final_val_focal
            )
        };
        for r in &self.rows {
            line(f, r, &r.seed.to_string())?;
        }
        for r in &self.means {
            line(f, r, "mean")?;
        }
        Ok(())
    }
}

fn means(rows: &[AblationRow], variants: &[Variant]) -> Vec<AblationRow> {
    variants
        .iter()
        .filter_map(|v| {
            let sel: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v.name()).collect();
            if sel.is_empty() {
                return None;
            }
            let n = sel.len() as f64;
            let avg = |f: fn(&AblationRow) -> f64| sel.iter().map(|r| f(r)).sum::<f64>() / n;
            Some(AblationRow {
                variant: v.name(),
                seed: 0,
                beat_strength: avg(|r| r.beat_strength),
                pattern_repetition: avg(|r| r.pattern_repetition),
                instrument_balance: avg(|r| r.instrument_balance),
                hihat_coactivation: avg(|r| r.hihat_coactivation),
                initial_val_focal: avg(|r| r.initial_val_focal),
                final_val_focal: avg(|r| r.final_val_focal),
            })
        })
        .collect()
}

/// Run every variant with every seed and collect the full results.
pub fn run_jobs(records: &[LoopRecord], cfg: &AblationConfig) -> Result<Vec<VariantResult>> {
    let jobs: Vec<(Variant, u64)> =
        cfg.variants.iter().flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s))).collect();
    let threads = match cfg.threads {
        0 => thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<maskbeat_core::Result<VariantResult>>>> = Mutex::new(vec![None; jobs.len()]);
    thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(variant, seed)) = jobs.get(k) else { break };
                log::info!("training {} seed {seed}", variant.name());
                let r = run_variant(records, variant, seed, &cfg.model, &cfg.loss, &cfg.train, cfg.n_generate);
                slots.lock().expect("no panics while holding the lock")[k] = Some(r);
            });
        }
    });
    let slots = slots.into_inner().expect("threads joined");
    let mut out = Vec::with_capacity(jobs.len());
    for r in slots.into_iter().flatten() {
        out.push(r?);
    }
    Ok(out)
}

pub fn run_ablation(records: &[LoopRecord], cfg: &AblationConfig) -> Result<AblationReport> {
    let results = run_jobs(records, cfg)?;
    let rows: Vec<AblationRow> = results.iter().map(AblationRow::from_result).collect();
    let means = means(&rows, &cfg.variants);
    Ok(AblationReport { rows, means })
}
