//! Command-line front end: argument definitions and command dispatch.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::dataset::{generate_synthetic, load_dataset, write_dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::evaluation::{paired_differences, paired_ttest, parse_split_metrics, EvalReport};
use crate::pipeline::{cluster_stats, evaluate, format_predictions, train, EvalMode, PipelineConfig, TrainedModel};

/// Environment variable holding the log filter (e.g. `info`, `debug`).
pub const LOG_ENV: &str = "CLASTER_LOG";

#[derive(Debug, Parser)]
#[command(name = "claster", version, about = "Zero-shot classification with clustered visual-semantic centroids")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset (instances.tsv, embeddings.tsv, split.tsv).
    GenSynth(GenSynthArgs),
    /// Run the full training pipeline and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write a report.
    Evaluate(EvaluateArgs),
    /// Write one prediction line per evaluated instance.
    Predict(PredictArgs),
    /// Report purity and per-class cluster histogram on the training partition.
    ClusterStats(ClusterStatsArgs),
    /// Paired t-test between two per-split metric files.
    Ttest(TtestArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    /// Number of classes.
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    /// Instances per class.
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    /// Visual feature dimension.
    #[arg(long, default_value_t = 32)]
    pub d_v: usize,
    /// Semantic embedding dimension.
    #[arg(long, default_value_t = 8)]
    pub d_s: usize,
    /// Noise standard deviation relative to the mean class-mean distance.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    /// Fraction of classes held out as unseen.
    #[arg(long, default_value_t = 0.5)]
    pub unseen_fraction: f64,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Training log path (defaults to the checkpoint path with `.log` appended).
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint path.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluation protocol: zsl or gzsl.
    #[arg(long, default_value = "zsl")]
    pub mode: EvalMode,
    /// Report output path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the prediction dump here.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Checkpoint path.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluation protocol: zsl or gzsl.
    #[arg(long, default_value = "zsl")]
    pub mode: EvalMode,
    /// Prediction dump path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClusterStatsArgs {
    /// Checkpoint path.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Report output path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TtestArgs {
    /// First metric file (`split_id<TAB>value` lines).
    pub first: PathBuf,
    /// Second metric file.
    pub second: PathBuf,
    /// Name of the comparison in the report.
    #[arg(long, default_value = "first_vs_second")]
    pub name: String,
    /// Report output path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Builds the pipeline config: defaults, then the file, then `--set` overrides.
pub fn load_config(args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            PipelineConfig::parse(&text)?
        }
        None => PipelineConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => crate::evaluation::write_atomic(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn gen_synth(a: &GenSynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        num_classes: a.classes,
        per_class: a.per_class,
        d_v: a.d_v,
        d_s: a.d_s,
        noise_scale: a.noise,
        seed: a.seed,
        unseen_fraction: a.unseen_fraction,
    };
    let ds = generate_synthetic(&spec)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_dataset(&ds, &a.out)?;
    log::info!("wrote {} instances to {}", ds.instances.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config)?;
    let data = load_dataset(&a.data)?;
    let (model, log) = train(cfg, &data)?;
    model.save(&a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    crate::evaluation::write_atomic(&log_path, &log.to_text())?;
    log::info!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model)?;
    let data = load_dataset(&a.data)?;
    let (report, preds) = evaluate(&model, &data, a.mode)?;
    if let Some(p) = &a.predictions {
        crate::evaluation::write_atomic(p, &format_predictions(&preds))?;
    }
    emit(a.out.as_deref(), &report.to_text())
}

fn predict_cmd(a: &PredictArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model)?;
    let data = load_dataset(&a.data)?;
    let (_, preds) = evaluate(&model, &data, a.mode)?;
    emit(a.out.as_deref(), &format_predictions(&preds))
}

fn cluster_stats_cmd(a: &ClusterStatsArgs) -> Result<()> {
    let model = TrainedModel::load(&a.model)?;
    let data = load_dataset(&a.data)?;
    emit(a.out.as_deref(), &cluster_stats(&model, &data)?.to_text())
}

fn ttest_cmd(a: &TtestArgs) -> Result<()> {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
    let first = parse_split_metrics(&read(&a.first)?)?;
    let second = parse_split_metrics(&read(&a.second)?)?;
    let result = paired_ttest(&paired_differences(&first, &second)?)?;
    let mut report = EvalReport::default();
    report.ttests.insert(a.name.clone(), result);
    emit(a.out.as_deref(), &report.to_text())
}

/// Runs one parsed command.
pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth(a) => gen_synth(a),
        Command::Train(a) => train_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::ClusterStats(a) => cluster_stats_cmd(a),
        Command::Ttest(a) => ttest_cmd(a),
    }
}

/// Parses `args`, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {e}", command_name(&cli.command));
            e.exit_code()
        }
    }
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenSynth(_) => "gen-synth",
        Command::Train(_) => "train",
        Command::Evaluate(_) => "evaluate",
        Command::Predict(_) => "predict",
        Command::ClusterStats(_) => "cluster-stats",
        Command::Ttest(_) => "ttest",
    }
}
