//! Command-line entry point. Exit codes: 0 ok, 1 usage, 2 data, 3 internal.

use std::ffi::OsString;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use maskbeat_core::decode::{decode, GenerationRequest};
use maskbeat_core::eval::{evaluate_set, generate_unconditional, novelty_report, Variant};
use maskbeat_core::extract::{autocorrelate, downmix, AugmentMode, ExtractionConfig};
use maskbeat_core::midi::{ingest, QuantizeConfig, DEFAULT_VELOCITY_THRESHOLD};
use maskbeat_core::model::{LossConfig, LossMix, ModelConfig};
use maskbeat_core::pattern::{Cell, DrumPattern, Instrument, LoopRecord, MaskedPattern, STEPS};
use maskbeat_core::synth::generate_synthetic_corpus;
use maskbeat_core::train::{train, TrainConfig, TrainOutcome};
use serde_json::json;

use crate::ablation::{run_ablation, AblationConfig};
use crate::checkpoint::{corpus_fingerprint, Checkpoint};
use crate::dataset::{build_dataset, write_midi_corpus};
use crate::error::{Error, Result};
use crate::format::{read_dataset, read_pattern_file, write_atomic, write_dataset, write_pattern_file};

#[derive(Debug, Parser)]
#[command(name = "maskbeat", version, about = "Mine, train, generate and evaluate two-bar drum loops")]
pub struct Cli {
    /// Seed for every stochastic step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse one MIDI file and print its quantized drum roll summary.
    Ingest(IngestArgs),
    /// Build a loop dataset from a directory of MIDI files.
    Extract(ExtractArgs),
    /// Train a model on a dataset and write a checkpoint.
    Train(TrainArgs),
    /// Generate one pattern from a checkpoint.
    Generate(GenerateArgs),
    /// Generate a batch and report metrics and novelty.
    Evaluate(EvaluateArgs),
    /// Train and compare loss variants over several seeds.
    Ablate(AblateArgs),
    /// Nearest-neighbour IoU of one dataset against another.
    Novelty(NoveltyArgs),
    /// Run the HTTP generation service.
    Serve(ServeArgs),
    /// Write a synthetic loop dataset (and optionally MIDI renderings).
    SynthCorpus(SynthArgs),
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    /// Note-ons below this velocity are ignored.
    #[arg(long, default_value_t = DEFAULT_VELOCITY_THRESHOLD)]
    pub velocity_threshold: u8,
    /// Snap to the straight sixteenth grid without estimating swing.
    #[arg(long)]
    pub no_swing: bool,
}

impl QuantizeArgs {
    fn config(&self) -> QuantizeConfig {
        QuantizeConfig { velocity_threshold: self.velocity_threshold, swing: !self.no_swing, ..QuantizeConfig::default() }
    }
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Write the roll as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub quantize: QuantizeArgs,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum AugmentArg {
    None,
    Shift,
    All,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    #[arg(long, default_value_t = 6)]
    pub min_hits: usize,
    #[arg(long, default_value_t = 0.40)]
    pub max_density: f64,
    #[arg(long, default_value_t = 0.05)]
    pub min_density: f64,
    #[arg(long, default_value_t = 0.85)]
    pub dedup: f64,
    #[arg(long, value_enum, default_value_t = AugmentArg::None)]
    pub augment: AugmentArg,
    /// Also write the summary here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub quantize: QuantizeArgs,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    pub d_model: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_layers: self.layers,
            n_heads: self.heads,
            dropout: self.dropout,
            ..ModelConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 3e-4)]
    pub lr: f64,
    /// Loss weights as focal,dependency,groove.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub mix: Option<Vec<f64>>,
}

impl OptimArgs {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { epochs: self.epochs, batch_size: self.batch, learning_rate: self.lr, seed, ..TrainConfig::default() }
    }

    fn loss_config(&self) -> LossConfig {
        let mut loss = LossConfig::default();
        if let Some(m) = &self.mix {
            loss.mix = LossMix { focal: m[0], dependency: m[1], groove: m[2] };
        }
        loss
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss curve table; defaults to the checkpoint path with `.csv` appended.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Use whole-timestep masks only (no per-instrument curriculum).
    #[arg(long)]
    pub timestep_only: bool,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    /// Instruments whose rows are kept from `--init`, e.g. kick,snare.
    #[arg(long, value_delimiter = ',')]
    pub lock_rows: Vec<String>,
    /// Starting pattern; cells outside locked rows are regenerated.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Rank candidates by probability alone, without Gumbel noise.
    #[arg(long)]
    pub no_noise: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long)]
    pub train_set: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    /// Also write the generated loops as a dataset.
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "mg,gl,dl,gldl,maskbeat")]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub seeds: Vec<u64>,
    /// Loops generated per run.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Worker threads; 0 = one per core.
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct NoveltyArgs {
    #[arg(long)]
    pub generated: PathBuf,
    #[arg(long)]
    pub train_set: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Directory of UI assets served at `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Also render each loop, tiled, as a MIDI file here.
    #[arg(long)]
    pub midi_dir: Option<PathBuf>,
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Extract(a) => cmd_extract(a, seed),
        Command::Train(a) => cmd_train(a, seed),
        Command::Generate(a) => cmd_generate(a, seed),
        Command::Evaluate(a) => cmd_evaluate(a, seed),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Novelty(a) => cmd_novelty(a),
        Command::Serve(a) => cmd_serve(a),
        Command::SynthCorpus(a) => cmd_synth(a, seed),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let bytes = fs::read(&a.input).map_err(|e| Error::io(&a.input, e))?;
    let track = ingest(&bytes, &a.quantize.config())?;
    println!("steps: {}", track.steps());
    println!("tempo_bpm: {:.2}", track.tempo_bpm);
    println!("swing_ratio: {:.4}", track.swing_ratio);
    for inst in Instrument::ALL {
        println!("hits.{}: {}", inst.name(), track.roll[inst.index()].iter().filter(|x| **x).count());
    }
    match autocorrelate(&downmix(&track.roll), &ExtractionConfig::default()) {
        Ok(p) => println!("period: {}", p.best_period.map_or_else(|| "none".to_string(), |t| t.to_string())),
        Err(e) => println!("period: none ({e})"),
    }
    if let Some(out) = &a.out {
        let roll: Vec<Vec<u8>> = track.roll.iter().map(|r| r.iter().map(|&x| u8::from(x)).collect()).collect();
        let doc = json!({
            "steps": track.steps(),
            "tempo_bpm": track.tempo_bpm,
            "swing_ratio": track.swing_ratio,
            "instruments": Instrument::ALL.iter().map(|i| i.name()).collect::<Vec<_>>(),
            "roll": roll,
        });
        write_text(out, &(doc.to_string() + "\n"))?;
    }
    Ok(())
}

fn cmd_extract(a: ExtractArgs, seed: u64) -> Result<()> {
    let cfg = ExtractionConfig {
        threshold: a.threshold,
        min_hits: a.min_hits,
        max_density: a.max_density,
        min_density: a.min_density,
        dedup_similarity: a.dedup,
        ..ExtractionConfig::default()
    };
    let mode = match a.augment {
        AugmentArg::None => AugmentMode::None,
        AugmentArg::Shift => AugmentMode::Shift,
        AugmentArg::All => AugmentMode::All,
    };
    let (records, report) = build_dataset(&a.input, &cfg, &a.quantize.config(), mode, seed)?;
    write_dataset(&a.out, &records)?;
    println!("{report}");
    if let Some(path) = &a.report {
        write_text(path, &format!("{report}\n"))?;
    }
    Ok(())
}

fn load_dataset(path: &Path) -> Result<Vec<LoopRecord>> {
    let records = read_dataset(path)?;
    if records.is_empty() {
        return Err(maskbeat_core::Error::EmptyDataset.into());
    }
    Ok(records)
}

fn cmd_train(a: TrainArgs, seed: u64) -> Result<()> {
    let records = load_dataset(&a.data)?;
    let model = a.model.config();
    let loss = a.optim.loss_config();
    let tc = TrainConfig { timestep_only: a.timestep_only, ..a.optim.train_config(seed) };
    let outcome: TrainOutcome = train(&records, &model, &loss, &tc, |e| {
        eprintln!("epoch {:>3}  train {:.5}  val {:.5}  focal {:.5}", e.epoch, e.train.total, e.val.total, e.val.focal);
    })?;
    let ckpt = Checkpoint::new(
        &model,
        &loss,
        outcome.weights.clone(),
        tc.epochs,
        outcome.best_epoch,
        seed,
        corpus_fingerprint(&records),
    );
    ckpt.save(&a.out)?;
    let curve_path = a.curve.unwrap_or_else(|| {
        let mut s = a.out.clone().into_os_string();
        s.push(".csv");
        PathBuf::from(s)
    });
    write_text(&curve_path, &outcome.curve_csv())?;
    print!("{}", outcome.curve_csv());
    println!("best_epoch: {}", outcome.best_epoch);
    Ok(())
}

fn initial_pattern(a: &GenerateArgs) -> Result<MaskedPattern> {
    let mut rows = Vec::new();
    for name in a.lock_rows.iter().filter(|s| !s.is_empty()) {
        let inst = Instrument::from_name(name.trim())
            .ok_or_else(|| Error::Usage(format!("--lock-rows: unknown instrument {name:?}")))?;
        rows.push(inst.index());
    }
    let Some(init) = &a.init else {
        if !rows.is_empty() {
            return Err(Error::Usage("--lock-rows needs --init to supply the locked values".into()));
        }
        return Ok(MaskedPattern::fully_masked());
    };
    let base = read_pattern_file(init)?.pattern;
    let mut mp = MaskedPattern::fully_masked();
    for &i in &rows {
        for t in 0..STEPS {
            mp.set_cell(i, t, if base.get(i, t) { Cell::Hit } else { Cell::Silent })?;
            mp.lock(i, t)?;
        }
    }
    Ok(mp)
}

fn cmd_generate(a: GenerateArgs, seed: u64) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let req = GenerationRequest {
        temperature: a.temperature,
        iterations: a.iterations,
        confidence_noise: !a.no_noise,
        ..GenerationRequest::new(initial_pattern(&a)?, seed)
    };
    let out = decode(&ckpt.model, &ckpt.weights, &req)?;
    let record = LoopRecord { source_id: format!("generated-{seed}"), ..LoopRecord::new(out.pattern, "") };
    write_pattern_file(&a.out, &record, false)?;
    println!("{}", out.pattern);
    println!("masked_counts: {:?}", out.trace.masked_counts());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs, seed: u64) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let training: Vec<DrumPattern> = load_dataset(&a.train_set)?.into_iter().map(|r| r.pattern).collect();
    let outcome = TrainOutcome { weights: ckpt.weights.clone(), best_epoch: ckpt.manifest.best_epoch, curve: Vec::new(), fallback_split: false };
    let generated = generate_unconditional(&ckpt.model, &outcome, a.n, seed, a.iterations, a.temperature)?;
    let m = evaluate_set(&generated)?;
    let nov = novelty_report(&generated, &training)?;
    let report = json!({
        "n": m.n,
        "seed": seed,
        "temperature": a.temperature,
        "iterations": a.iterations,
        "mean": {"beat_strength": m.mean.beat_strength, "pattern_repetition": m.mean.pattern_repetition, "instrument_balance": m.mean.instrument_balance},
        "stderr": {"beat_strength": m.stderr.beat_strength, "pattern_repetition": m.stderr.pattern_repetition, "instrument_balance": m.stderr.instrument_balance},
        "novelty": {"max_iou": nov.max, "median_iou": nov.median, "histogram": nov.histogram.to_vec(), "at_least_0_9": nov.count_at_least(0.9)},
    });
    write_text(&a.out, &(serde_json::to_string_pretty(&report).expect("json") + "\n"))?;
    if let Some(path) = &a.samples {
        let records: Vec<LoopRecord> =
            generated.iter().enumerate().map(|(k, p)| LoopRecord::new(*p, format!("generated-{seed}-{k:05}"))).collect();
        write_dataset(path, &records)?;
    }
    println!(
        "beat_strength {:.4} ± {:.4}\npattern_repetition {:.4} ± {:.4}\ninstrument_balance {:.4} ± {:.4}\nnovelty max {:.4} median {:.4}",
        m.mean.beat_strength, m.stderr.beat_strength, m.mean.pattern_repetition, m.stderr.pattern_repetition,
        m.mean.instrument_balance, m.stderr.instrument_balance, nov.max, nov.median
    );
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> Result<()> {
    let records = load_dataset(&a.data)?;
    let variants = a
        .variants
        .iter()
        .map(|s| Variant::from_name(s.trim()).ok_or_else(|| Error::Usage(format!("--variants: unknown variant {s:?}"))))
        .collect::<Result<Vec<_>>>()?;
    if a.seeds.is_empty() {
        return Err(Error::Usage("--seeds: need at least one seed".into()));
    }
    let cfg = AblationConfig {
        variants,
        seeds: a.seeds.clone(),
        model: a.model.config(),
        loss: a.optim.loss_config(),
        train: a.optim.train_config(0),
        n_generate: a.n,
        threads: a.threads,
    };
    let report = run_ablation(&records, &cfg)?;
    print!("{report}");
    if let Some(out) = &a.out {
        write_text(out, &(report.to_json() + "\n"))?;
    }
    Ok(())
}

fn cmd_novelty(a: NoveltyArgs) -> Result<()> {
    let generated: Vec<DrumPattern> = load_dataset(&a.generated)?.into_iter().map(|r| r.pattern).collect();
    let training: Vec<DrumPattern> = load_dataset(&a.train_set)?.into_iter().map(|r| r.pattern).collect();
    let nov = novelty_report(&generated, &training)?;
    let doc = json!({"max_iou": nov.max, "median_iou": nov.median, "histogram": nov.histogram.to_vec(), "nearest": nov.nearest});
    println!("max_iou {:.4}\nmedian_iou {:.4}", nov.max, nov.median);
    if let Some(out) = &a.out {
        write_text(out, &(serde_json::to_string_pretty(&doc).expect("json") + "\n"))?;
    }
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let rt = tokio::runtime::Runtime::new().map_err(|e| Error::Usage(format!("runtime: {e}")))?;
    rt.block_on(crate::service::serve(a.ckpt, a.addr, a.static_dir))
}

fn cmd_synth(a: SynthArgs, seed: u64) -> Result<()> {
    if a.n == 0 {
        return Err(Error::Usage("--n must be at least 1".into()));
    }
    let records = generate_synthetic_corpus(a.n, seed);
    write_dataset(&a.out, &records)?;
    if let Some(dir) = &a.midi_dir {
        write_midi_corpus(dir, &records)?;
    }
    println!("wrote {} loops", records.len());
    Ok(())
}
