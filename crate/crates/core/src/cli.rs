//! Command-line front end. `main.rs` only parses arguments and maps errors
//! to exit codes; everything here is callable from tests.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cuboidcast_tensor::{load_checkpoint, restore_params, save_checkpoint};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{chaos_ensemble, chaos_probe, gen_nbody_mnist, read_dataset, write_dataset, GenConfig, Glyphs, PhysicsConfig, SequenceDataset};
use crate::error::{config, Error, Result};
use crate::metrics::CsiConfig;
use crate::model::{Model, ModelConfig};
use crate::patterns::{cost_model, enumerate_search_space, validate_pattern, BlockDims, CostReport, PatternConfig, Template};
use crate::selfcheck::{run_selfcheck, SelfcheckOptions};
use crate::train::{evaluate, train, EvalReport, Forecaster, Metric, TrainConfig, ALL_METRICS};

#[derive(Debug, Parser)]
#[command(name = "cuboidcast", version, about = "Cuboid-attention forecasting toolkit")]
pub struct Cli {
    /// Worker threads for data generation, training and evaluation.
    #[arg(long, global = true, env = "CF_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an N-body or free-flight digit dataset.
    GenData(GenDataArgs),
    /// Train a model; writes best/last checkpoints and a JSON-lines history.
    Train(TrainArgs),
    /// Score a checkpoint or a baseline on a dataset.
    Eval(EvalArgs),
    /// Analytic operation counts of one cuboid-attention block.
    Flops(FlopsArgs),
    /// Train every search-space pattern with the same budget.
    PatternSearch(SearchArgs),
    /// Compare perturbation growth under gravity and in free flight.
    ChaosDemo(ChaosArgs),
    /// Run the numeric invariant battery.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Moving,
    Nbody,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_enum)]
    pub kind: Kind,
    #[arg(long)]
    pub n: usize,
    /// Total frames per sequence, input plus target.
    #[arg(long, default_value_t = 20)]
    pub frames: usize,
    /// Observed frames; defaults to half of `--frames`.
    #[arg(long)]
    pub input_len: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Digits per sequence; 3 for nbody, 2 for moving.
    #[arg(long)]
    pub digits: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// IDX image file to draw digits from instead of the built-in glyphs.
    #[arg(long)]
    pub glyphs: Option<PathBuf>,
    /// JSON object overriding physics fields.
    #[arg(long)]
    pub physics: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// JSON with optional `model`, `train` and `val_frac` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Separate validation set; otherwise the tail of `--data` is held out.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub pattern: Option<String>,
    #[arg(long)]
    pub globals: Option<usize>,
    #[arg(long)]
    pub val_frac: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Persistence,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "baseline", conflicts_with = "baseline")]
    pub ckpt: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated subset of mse,mae,ssim,csi.
    #[arg(long, default_value = "mse,mae,ssim,csi")]
    pub metrics: String,
    /// Comma-separated CSI thresholds on the 0..255 scale.
    #[arg(long)]
    pub thresholds: Option<String>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Pattern name (e.g. axial, video_swin_2x8) or stages like `(10,1,1)->(1,8,8)/dilated`.
    #[arg(long, required_unless_present = "pattern_file", conflicts_with = "pattern_file")]
    pub pattern: Option<String>,
    /// JSON pattern file with `name`, `stages` and optional `globals`.
    #[arg(long)]
    pub pattern_file: Option<PathBuf>,
    /// `TxHxW`.
    #[arg(long)]
    pub shape: String,
    #[arg(long)]
    pub channels: usize,
    #[arg(long, default_value_t = 0)]
    pub globals: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 4)]
    pub ffn_ratio: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Dataset to split into train and validation; generated when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model overlay JSON; frame dimensions come from the data.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 96)]
    pub n: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 2)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.25)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Only run the first `limit` entries.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ChaosArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Relative velocity perturbation.
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
    #[arg(long, default_value_t = 20)]
    pub steps: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seeds averaged for the ensemble ratio.
    #[arg(long, default_value_t = 32)]
    pub ensemble: usize,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    /// Reduced sweeps, well under a minute.
    #[arg(long)]
    pub fast: bool,
    /// Test hook: corrupts the cuboid index map so the bijection suite fails.
    #[arg(long, hide = true)]
    pub corrupt_index_map: bool,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

pub fn run(cli: Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return config("--threads must be positive");
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Runtime(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::GenData(a) => cmd_gen_data(&a, out),
        Command::Train(a) => cmd_train(&a, out),
        Command::Eval(a) => cmd_eval(&a, out),
        Command::Flops(a) => cmd_flops(&a, out),
        Command::PatternSearch(a) => cmd_pattern_search(&a, out),
        Command::ChaosDemo(a) => cmd_chaos_demo(&a, out),
        Command::Selfcheck(a) => cmd_selfcheck(&a, out),
    })
}

/// Recursively replaces fields of `base` with those present in `patch`.
pub fn overlay(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn from_value<T: serde::de::DeserializeOwned>(v: Value, what: &str) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{what}: {e}")))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, v)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn load_glyphs(path: Option<&Path>) -> Result<Glyphs> {
    path.map_or_else(|| Ok(Glyphs::procedural()), Glyphs::load_idx)
}

pub fn cmd_gen_data(a: &GenDataArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let input_len = a.input_len.unwrap_or(a.frames / 2);
    if a.frames <= input_len || input_len == 0 {
        return config(format!("--frames {} leaves no room for {input_len} input frames plus targets", a.frames));
    }
    let base = match a.kind {
        Kind::Nbody => PhysicsConfig::default(),
        Kind::Moving => PhysicsConfig::moving_mnist(),
    };
    let mut physics = serde_json::to_value(PhysicsConfig { bodies: a.digits.unwrap_or(base.bodies), ..base })?;
    if let Some(p) = &a.physics {
        overlay(&mut physics, &read_json(p)?);
    }
    let physics: PhysicsConfig = from_value(physics, "physics")?;
    let cfg = GenConfig { input_len, target_len: a.frames - input_len, size: a.size, physics };
    let glyphs = load_glyphs(a.glyphs.as_deref())?;
    let data = gen_nbody_mnist(&cfg, &glyphs, a.n, a.seed)?;
    write_dataset(&a.out, &data)?;
    writeln!(out, "wrote {} sequences of {} {}x{} frames to {} (sha256 {})", a.n, a.frames, a.size, a.size, a.out.display(), data.checksum())?;
    Ok(())
}

/// Fully resolved training run, embedded in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Fraction of `--data` held out for validation when no `--val` is given.
    pub val_frac: f64,
}

impl RunConfig {
    /// Desk-scale defaults with frame dimensions taken from `data`.
    pub fn for_data(data: &SequenceDataset) -> Self {
        let model = ModelConfig {
            input_len: data.input_len(),
            target_len: data.target_len(),
            height: data.height(),
            width: data.width(),
            ..ModelConfig::tiny(8)
        };
        Self { model, train: TrainConfig { epochs: 20, batch_size: 32, ..TrainConfig::default() }, val_frac: 0.1 }
    }
}

pub fn resolve_run(a: &TrainArgs, data: &SequenceDataset) -> Result<RunConfig> {
    let mut v = serde_json::to_value(RunConfig::for_data(data))?;
    if let Some(p) = &a.config {
        overlay(&mut v, &read_json(p)?);
    }
    let mut set = |path: [&str; 2], x: Value| overlay(&mut v, &json!({ path[0]: { path[1]: x } }));
    if let Some(x) = a.lr {
        set(["train", "lr"], json!(x));
    }
    if let Some(x) = a.epochs {
        set(["train", "epochs"], json!(x));
    }
    if let Some(x) = a.batch_size {
        set(["train", "batch_size"], json!(x));
    }
    if let Some(x) = a.micro_batch {
        set(["train", "micro_batch"], json!(x));
    }
    if let Some(x) = a.patience {
        set(["train", "patience"], json!(x));
    }
    if let Some(x) = a.seed {
        set(["train", "seed"], json!(x));
    }
    if let Some(x) = &a.pattern {
        set(["model", "pattern"], json!(x));
    }
    if let Some(x) = a.globals {
        set(["model", "globals"], json!(x));
    }
    if let Some(x) = a.val_frac {
        overlay(&mut v, &json!({ "val_frac": x }));
    }
    let run: RunConfig = from_value(v, "run config")?;
    run.model.validate()?;
    run.train.validate()?;
    if !(run.val_frac > 0.0 && run.val_frac < 1.0) {
        return config(format!("val_frac {} must lie strictly between 0 and 1", run.val_frac));
    }
    Ok(run)
}

/// Splits off the last `frac` of the samples, at least one on each side.
pub fn holdout(data: &SequenceDataset, frac: f64) -> Result<(SequenceDataset, SequenceDataset)> {
    let n = data.len();
    let n_val = ((n as f64 * frac).round() as usize).max(1);
    if n_val >= n {
        return config(format!("{n} samples are too few to hold out {frac} for validation"));
    }
    let idx: Vec<usize> = (0..n).collect();
    Ok((data.subset(&idx[..n - n_val]), data.subset(&idx[n - n_val..])))
}

fn data_summary(path: &Path, data: &SequenceDataset) -> Value {
    json!({ "path": path.display().to_string(), "sha256": data.checksum(), "samples": data.len(), "seed": data.header.seed, "generator": data.header.config })
}

pub fn cmd_train(a: &TrainArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let data = read_dataset(&a.data)?;
    let run = resolve_run(a, &data)?;
    let (train_set, val_set) = match &a.val {
        Some(p) => (data.clone(), read_dataset(p)?),
        None => holdout(&data, run.val_frac)?,
    };
    ensure_dir(&a.out)?;
    let seed = run.train.seed;
    let mut model = Model::build(&run.model, seed)?;
    let base = json!({
        "run": run,
        "seed": seed,
        "data": data_summary(&a.data, &data),
        "val_data": a.val.as_ref().map(|p| p.display().to_string()),
        "train_samples": train_set.len(),
        "val_samples": val_set.len(),
        "params": model.count_params(),
    });
    write_json(&a.out.join("config.json"), &base)?;
    let mut history = BufWriter::new(File::create(a.out.join("history.jsonl"))?);
    let mut io_err = None;
    let outcome = train(&mut model, &train_set, &val_set, &run.train, |r| {
        let line = serde_json::to_string(r).expect("record serializes");
        let res = writeln!(history, "{line}").and_then(|_| history.flush());
        if let Err(e) = res {
            io_err.get_or_insert(e);
        }
        let _ = writeln!(out, "epoch {:>3}  lr {:.2e}  train {:.5}  val mse {:.3}  |g| {:.3}", r.epoch, r.lr, r.train_loss, r.val_mse, r.grad_norm);
    })?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let tagged = |kind: &str, epoch: usize| {
        let mut c = base.clone();
        overlay(&mut c, &json!({ "checkpoint": kind, "epoch": epoch }));
        c
    };
    let last_epoch = outcome.history.last().map_or(0, |r| r.epoch);
    save_checkpoint(&a.out.join("last.ckpt"), &tagged("last", last_epoch), &model.params)?;
    save_checkpoint(&a.out.join("best.ckpt"), &tagged("best", outcome.best_epoch), &outcome.best)?;
    writeln!(
        out,
        "best epoch {} (val mse {:.3}){}; checkpoints in {}",
        outcome.best_epoch,
        outcome.best_val_mse,
        if outcome.stopped_early { ", stopped early" } else { "" },
        a.out.display()
    )?;
    Ok(())
}

/// Rebuilds a model from a checkpoint written by `train`.
pub fn load_model(path: &Path) -> Result<(Model, Value)> {
    let (header, tensors) = load_checkpoint(path)?;
    let cfg: ModelConfig = from_value(header.config["run"]["model"].clone(), "checkpoint model config")?;
    let seed = header.config["seed"].as_u64().ok_or_else(|| Error::Config("checkpoint has no seed".into()))?;
    let mut model = Model::build(&cfg, seed)?;
    restore_params(&header, tensors, &mut model.params)?;
    Ok((model, header.config))
}

fn parse_list<T: FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(|p| p.trim().parse()).collect()
}

pub fn cmd_eval(a: &EvalArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let metrics: Vec<Metric> = if a.metrics.trim() == "all" { ALL_METRICS.to_vec() } else { parse_list(&a.metrics)? };
    let csi = match &a.thresholds {
        Some(t) => CsiConfig {
            thresholds: t
                .split(',')
                .map(|x| x.trim().parse().map_err(|_| Error::Usage(format!("bad threshold `{x}`"))))
                .collect::<Result<_>>()?,
        },
        None => CsiConfig::default(),
    };
    csi.validate()?;
    let data = read_dataset(&a.data)?;
    let loaded = a.ckpt.as_deref().map(load_model).transpose()?;
    let (forecaster, source) = match &loaded {
        Some((model, cfg)) => {
            crate::train::check_data(model, &data)?;
            (Forecaster::Model(model), json!({ "checkpoint": a.ckpt.as_ref().map(|p| p.display().to_string()), "config": cfg }))
        }
        None => (Forecaster::Persistence, json!({ "baseline": "persistence" })),
    };
    let report = evaluate(forecaster, &data, &metrics, a.batch, &csi)?;
    write_eval_summary(&report, out)?;
    if let Some(path) = &a.report {
        let seed = source["config"]["seed"].as_u64();
        write_json(path, &json!({ "source": source, "seed": seed, "data": data_summary(&a.data, &data), "metrics": metrics, "thresholds": csi.thresholds, "report": report }))?;
        writeln!(out, "report written to {}", path.display())?;
    }
    Ok(())
}

fn write_eval_summary(r: &EvalReport, out: &mut (dyn Write + Send)) -> Result<()> {
    writeln!(out, "{} on {} samples", r.forecaster, r.samples)?;
    for (name, v) in [("mse", r.mse), ("mae", r.mae), ("ssim", r.ssim)] {
        if let Some(v) = v {
            writeln!(out, "  {name:<6} {v:.4}")?;
        }
    }
    if let Some(c) = &r.csi_pooled {
        writeln!(out, "  csi-m  {:.4} (pooled)", c.csi_m)?;
    }
    if let Some(c) = &r.csi_per_step {
        writeln!(out, "  csi-m  {:.4} (per step)", c.csi_m6)?;
    }
    Ok(())
}

pub fn parse_shape(s: &str) -> Result<[usize; 3]> {
    let parts: Vec<&str> = s.split(['x', 'X', ',']).collect();
    let bad = || Error::Usage(format!("shape must look like TxHxW, got `{s}`"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let mut dims = [0; 3];
    for (d, p) in dims.iter_mut().zip(parts) {
        *d = p.trim().parse().map_err(|_| bad())?;
        if *d == 0 {
            return Err(bad());
        }
    }
    Ok(dims)
}

pub fn flops_report(a: &FlopsArgs) -> Result<(PatternConfig, CostReport)> {
    let dims = parse_shape(&a.shape)?;
    let pattern = match (&a.pattern, &a.pattern_file) {
        (_, Some(path)) => {
            let mut p = PatternConfig::load(path)?;
            p.globals = a.globals.max(p.globals);
            p
        }
        (Some(name), None) => PatternConfig::build(&name.parse::<Template>()?, dims, a.globals)?,
        (None, None) => return Err(Error::Usage("one of --pattern or --pattern-file is required".into())),
    };
    if a.channels == 0 || a.heads == 0 || a.channels % a.heads != 0 {
        return config(format!("{} heads do not divide {} channels", a.heads, a.channels));
    }
    let block = BlockDims { channels: a.channels, globals: pattern.globals, heads: a.heads, ffn_ratio: a.ffn_ratio, global_ffn_ratio: 1 };
    let report = cost_model(&pattern, dims, &block);
    Ok((pattern, report))
}

pub fn cmd_flops(a: &FlopsArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let (pattern, r) = flops_report(a)?;
    let checks = validate_pattern(&pattern, r.dims);
    if a.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&json!({ "pattern": pattern, "checks": checks, "cost": r }))?)?;
        return Ok(());
    }
    let [t, h, w] = r.dims;
    writeln!(out, "pattern {}  shape {t}x{h}x{w}  C={}  P={}  heads={}", pattern.name, r.block.channels, r.block.globals, r.block.heads)?;
    for w in checks.iter().flat_map(|c| &c.warnings) {
        writeln!(out, "  note: {w}")?;
    }
    writeln!(out, "{:<5} {:<28} {:>8} {:>14} {:>14} {:>14} {:>14}", "stage", "cuboid", "cuboids", "attention", "global", "ffn", "total")?;
    for (i, s) in r.stages.iter().enumerate() {
        writeln!(
            out,
            "{:<5} {:<28} {:>8} {:>14} {:>14} {:>14} {:>14}",
            i,
            s.spec.to_string(),
            s.cuboids,
            s.attention.total(),
            s.global_attention.total(),
            s.ffn.total(),
            s.total().total()
        )?;
    }
    writeln!(out, "total               {:>14}  (attention only {})", r.total, r.attention_only)?;
    writeln!(out, "full attention      {:>14}  (score MACs {})", r.full_attention_total, r.full_attention_scores)?;
    writeln!(out, "ratio to full       {:>14.4}", r.total as f64 / r.full_attention_total as f64)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRow {
    pub pattern: String,
    pub name: String,
    pub globals: usize,
    pub params: usize,
    /// Instrumented operation count of one forward pass, single sample.
    pub forward_ops: u64,
    pub best_epoch: usize,
    pub mse: f64,
    pub mae: f64,
    pub ssim: f64,
}

pub fn pattern_search(a: &SearchArgs, data: &SequenceDataset, mut progress: impl FnMut(&SearchRow)) -> Result<Vec<SearchRow>> {
    let (train_set, val_set) = holdout(data, a.val_frac)?;
    let mut base = serde_json::to_value(RunConfig::for_data(data).model)?;
    if let Some(p) = &a.config {
        overlay(&mut base, &read_json(p)?);
    }
    let tc = TrainConfig { epochs: a.epochs, batch_size: a.batch_size, micro_batch: a.batch_size.min(8), patience: a.epochs, seed: a.seed, ..TrainConfig::default() };
    let entries = enumerate_search_space();
    let take = a.limit.unwrap_or(entries.len());
    let mut rows = Vec::new();
    for e in entries.into_iter().take(take) {
        let mut v = base.clone();
        overlay(&mut v, &json!({ "pattern": e.template.to_string(), "globals": e.globals }));
        let cfg: ModelConfig = from_value(v, "model config")?;
        cfg.validate()?;
        let mut model = Model::build(&cfg, a.seed)?;
        let forward_ops = model.forward_cost()?.total();
        let outcome = train(&mut model, &train_set, &val_set, &tc, |_| {})?;
        model.params = outcome.best;
        let r = evaluate(Forecaster::Model(&model), &val_set, &[Metric::Mse, Metric::Mae, Metric::Ssim], tc.micro_batch, &CsiConfig::default())?;
        let row = SearchRow {
            pattern: e.label(),
            name: e.template.to_string(),
            globals: e.globals,
            params: model.count_params(),
            forward_ops,
            best_epoch: outcome.best_epoch,
            mse: r.mse.expect("requested"),
            mae: r.mae.expect("requested"),
            ssim: r.ssim.expect("requested"),
        };
        progress(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn cmd_pattern_search(a: &SearchArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let (data, source) = match &a.data {
        Some(p) => (read_dataset(p)?, data_summary(p, &read_dataset(p)?)),
        None => {
            let d = gen_nbody_mnist(&GenConfig::nbody(a.size), &Glyphs::procedural(), a.n, a.seed)?;
            let s = json!({ "generated": true, "sha256": d.checksum(), "samples": d.len(), "seed": a.seed, "generator": d.header.config });
            (d, s)
        }
    };
    writeln!(out, "{:<34} {:>9} {:>14} {:>10} {:>10} {:>7}", "pattern", "params", "forward ops", "mse", "mae", "ssim")?;
    let rows = pattern_search(a, &data, |r| {
        let _ = writeln!(out, "{:<34} {:>9} {:>14} {:>10.3} {:>10.3} {:>7.4}", r.pattern, r.params, r.forward_ops, r.mse, r.mae, r.ssim);
    })?;
    if let Some(path) = &a.report {
        let settings = json!({ "epochs": a.epochs, "batch_size": a.batch_size, "val_frac": a.val_frac, "config": a.config.as_ref().map(|p| p.display().to_string()) });
        write_json(path, &json!({ "seed": a.seed, "settings": settings, "data": source, "rows": rows }))?;
    }
    Ok(())
}

/// Binary PGM (P5) image.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    assert_eq!(pixels.len(), width * height, "pixel buffer matches the image size");
    let mut f = BufWriter::new(File::create(path)?);
    write!(f, "P5\n{width} {height}\n255\n")?;
    f.write_all(pixels)?;
    f.flush()?;
    Ok(())
}

/// Lays `rows` sequences of `steps` square frames side by side, one sequence per row.
pub fn frame_grid(rows: &[&[u8]], steps: usize, size: usize) -> Vec<u8> {
    let width = steps * size;
    let mut img = vec![0u8; rows.len() * size * width];
    for (r, seq) in rows.iter().enumerate() {
        for s in 0..steps {
            for y in 0..size {
                let src = &seq[(s * size + y) * size..][..size];
                img[(r * size + y) * width + s * size..][..size].copy_from_slice(src);
            }
        }
    }
    img
}

pub fn cmd_chaos_demo(a: &ChaosArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    if a.steps == 0 {
        return config("--steps must be positive");
    }
    let cfg = GenConfig::nbody(a.size);
    let glyphs = Glyphs::procedural();
    let run = chaos_probe(&cfg, &glyphs, a.delta, a.seed, a.steps)?;
    let seeds: Vec<u64> = (0..a.ensemble as u64).map(|i| a.seed + i).collect();
    let ensemble = chaos_ensemble(&cfg, &glyphs, a.delta, &seeds, a.steps)?;
    ensure_dir(&a.out)?;
    let [n0, n1, f0, f1] = &run.frames;
    let width = a.steps * a.size;
    write_pgm(&a.out.join("nbody.pgm"), width, 2 * a.size, &frame_grid(&[n0, n1], a.steps, a.size))?;
    write_pgm(&a.out.join("free.pgm"), width, 2 * a.size, &frame_grid(&[f0, f1], a.steps, a.size))?;
    write_json(&a.out.join("divergence.json"), &json!({ "seed": a.seed, "config": cfg, "probe": run.report, "ensemble": ensemble }))?;
    let fmt = |r: Option<f64>| r.map_or("undefined".to_string(), |r| format!("{r:.2}"));
    writeln!(out, "seed {}: nbody divergence {:.4}, free {:.4}, ratio {}", a.seed, run.report.nbody.final_position, run.report.free.final_position, fmt(run.report.ratio))?;
    writeln!(out, "{} seeds: ratio of means {}, median ratio {}", seeds.len(), fmt(ensemble.ratio_of_means), fmt(ensemble.median_ratio))?;
    writeln!(out, "frames and divergence.json written to {}", a.out.display())?;
    Ok(())
}

pub fn cmd_selfcheck(a: &SelfcheckArgs, out: &mut (dyn Write + Send)) -> Result<()> {
    let report = run_selfcheck(SelfcheckOptions { fast: a.fast, corrupt_index_map: a.corrupt_index_map });
    for s in &report.suites {
        writeln!(out, "{:<4} {:<18} {:>7.2}s  {}", if s.passed { "ok" } else { "FAIL" }, s.name, s.seconds, s.detail)?;
    }
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    let failed: Vec<String> = report.suites.iter().filter(|s| !s.passed).map(|s| format!("{} ({})", s.name, s.detail)).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Runtime(format!("selfcheck failed: {}", failed.join("; "))))
    }
}
