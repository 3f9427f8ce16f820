//! Command-line surface.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use planb_core::datagen::{
    enumerate_futures, sample_video, FeatureModel, FutureDistribution, GrammarSpec, DEFAULT_FEATURE_DIM,
    DEFAULT_NOISE_STD,
};
use planb_core::dataio::{make_eval_instance, EvalInstance, Video};
use planb_core::seed::derive_seed;
use planb_core::trainer::{TrainConfig, TrainedModel};
use planb_core::Error as CoreError;

use crate::dataset::{ensure_dir, split_to_text, write_file, Dataset, Layout, Vocab};
use crate::error::{Error, Result};
use crate::experiments::{ablate, sweep_threads, train_restarts};
use crate::formats::{
    merge_metrics, metrics_rows, prediction_text, read_csv, read_json, write_csv, write_json, EpochRow, MetricsFile,
    MetricsRow, RestartRow, ABLATION_HEADER, EPOCH_HEADER, METRICS_HEADER, RESTART_HEADER, SWEEP_HEADER,
};

/// Environment variable consulted when no seed is given.
pub const SEED_ENV: &str = "PLANB_SEED";

/// Seed stream of the per-class feature centres in generated data.
const FEATURE_STREAM: u64 = u64::MAX;

const GRAMMAR_HELP: &str = "\
Grammar files are JSON objects with exactly these fields:
  actions        C action names
  startDist      C start probabilities
  transitions    C rows of C+1 probabilities; column C ends the video
  durationRange  C pairs [minFrames, maxFrames]
  maxVideoLen    frame cap

Example:
  {\"actions\": [\"a\", \"b\"], \"startDist\": [1, 0],
   \"transitions\": [[0, 1, 0], [0, 0, 1]],
   \"durationRange\": [[5, 8], [10, 12]], \"maxVideoLen\": 100}";

#[derive(Debug, Parser)]
#[command(name = "planb", version, about = "Multi-hypothesis long-term action forecasting")]
#[command(after_help = "Exit status: 0 ok, 1 usage error, 2 data error, 3 numeric failure.")]
pub struct Cli {
    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a synthetic dataset from an action grammar
    #[command(after_help = GRAMMAR_HELP)]
    GenData(GenDataArgs),
    /// Train a model with restarts
    Train(TrainArgs),
    /// Evaluate a checkpoint over an (alpha, beta) grid
    Eval(EvalArgs),
    /// Train and compare the four component variants
    Ablate(AblateArgs),
    /// Train and evaluate one model per thread count
    SweepThreads(SweepArgs),
    /// Merge metrics tables into one long-format table
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Grammar JSON file
    #[arg(long)]
    pub grammar: PathBuf,
    /// Output dataset directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of videos
    #[arg(long)]
    pub videos: usize,
    /// Share of videos in the test split
    #[arg(long, default_value_t = 0.2)]
    pub test_fraction: f64,
    /// Random seed [default: $PLANB_SEED or 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Feature dimension
    #[arg(long, default_value_t = DEFAULT_FEATURE_DIM)]
    pub feature_dim: usize,
    /// Standard deviation of the feature noise
    #[arg(long, default_value_t = DEFAULT_NOISE_STD)]
    pub noise_std: f64,
    /// Observed fraction used for the oracle files
    #[arg(long, default_value_t = 0.3)]
    pub alpha: f64,
    /// Predicted fraction used for the oracle files
    #[arg(long, default_value_t = 0.5)]
    pub beta: f64,
    /// Segment bound of the oracle enumeration
    #[arg(long, default_value_t = 32)]
    pub max_depth: usize,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// key=value configuration file
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key, e.g. --set lambda=0.2 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Random seed; overrides the configuration [default: $PLANB_SEED or 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for independent runs
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Split to train on
    #[arg(long, default_value = "train")]
    pub split: String,
    /// Output directory for the model and logs
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Split to evaluate
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Checkpoint written by train
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory for metrics and predictions
    #[arg(long)]
    pub out: PathBuf,
    /// Observed fractions (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "0.3")]
    pub alpha: Vec<f64>,
    /// Predicted fractions (comma separated)
    #[arg(long, value_delimiter = ',', default_value = "0.5")]
    pub beta: Vec<f64>,
    /// Dataset name in the metrics tables [default: data directory name]
    #[arg(long)]
    pub name: Option<String>,
    /// Keep every n-th frame
    #[arg(long, default_value_t = 1)]
    pub downsample: usize,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Split to train on
    #[arg(long, default_value = "train")]
    pub train_split: String,
    /// Split to evaluate on
    #[arg(long, default_value = "test")]
    pub test_split: String,
    /// Output CSV file
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Split to train on
    #[arg(long, default_value = "train")]
    pub train_split: String,
    /// Split to evaluate on
    #[arg(long, default_value = "test")]
    pub test_split: String,
    /// Thread counts to try (comma separated)
    #[arg(long, value_delimiter = ',', required = true)]
    pub threads: Vec<usize>,
    /// Output CSV file
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics CSV files written by eval
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output directory for report.csv and report.json
    #[arg(long)]
    pub out: PathBuf,
}

/// Oracle file of one evaluation video.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleFile {
    pub alpha: f64,
    pub beta: f64,
    pub horizon: usize,
    pub distribution: FutureDistribution,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Defaults, then the file, then `--set`, then `--seed`; the environment
/// seed applies only when none of these names one.
pub fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut c = TrainConfig::default();
    let mut seeded = false;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        seeded |= text
            .lines()
            .any(|l| l.split('#').next().unwrap_or("").split('=').next().unwrap_or("").trim() == "seed");
        c.apply_text(&text)
            .map_err(|e| Error::Usage(format!("{}: {e}", path.display())))?;
    }
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        c.set(k, v)?;
        seeded |= k.trim() == "seed";
    }
    match (args.seed, seeded) {
        (Some(s), _) => c.seed = s,
        (None, false) => c.seed = env_seed()?.unwrap_or(0),
        (None, true) => {}
    }
    c.validate()?;
    Ok(c)
}

fn video_id(i: usize) -> String {
    format!("video_{i:05}")
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.test_fraction) {
        return Err(Error::Usage("--test-fraction must lie in [0, 1]".into()));
    }
    let grammar: GrammarSpec = read_json(&a.grammar)?;
    grammar.validate()?;
    let seed = a.seed.map_or_else(env_seed, |s| Ok(Some(s)))?.unwrap_or(0);
    let vocab = Vocab::new(grammar.actions.clone())?;
    let fm = FeatureModel::new(grammar.num_classes(), a.feature_dim, a.noise_std, derive_seed(seed, FEATURE_STREAM))?;
    let layout = Layout::new(&a.out);
    ensure_dir(&a.out)?;
    ensure_dir(&a.out.join(crate::dataset::LABEL_DIR))?;
    ensure_dir(&a.out.join(crate::dataset::FEATURE_DIR))?;
    write_file(&layout.vocab(), vocab.to_text().as_bytes())?;
    write_json(&a.out.join("grammar.json"), &grammar)?;
    let n_test = (a.videos as f64 * a.test_fraction).floor() as usize;
    let ids: Vec<String> = (0..a.videos).map(video_id).collect();
    let (train_ids, test_ids) = ids.split_at(a.videos - n_test);
    write_file(&layout.split("train"), split_to_text(train_ids).as_bytes())?;
    write_file(&layout.split("test"), split_to_text(test_ids).as_bytes())?;
    ensure_dir(&a.out.join(crate::dataset::ORACLE_DIR))?;
    for (i, id) in ids.iter().enumerate() {
        let v = sample_video(&grammar, &fm, derive_seed(seed, i as u64))?;
        layout.write_video(id, &v, &vocab, true)?;
        if i < train_ids.len() {
            continue;
        }
        match make_eval_instance(&v, a.alpha, a.beta) {
            Ok(inst) => {
                let dist = enumerate_futures(&grammar, &inst.observed.segments(), inst.horizon, a.max_depth)?;
                let file = OracleFile {
                    alpha: a.alpha,
                    beta: a.beta,
                    horizon: inst.horizon,
                    distribution: dist,
                };
                write_json(&layout.oracle(id), &file)?;
            }
            Err(CoreError::Data(m)) => log::warn!("{id}: no oracle ({m})"),
            Err(e) => return Err(e.into()),
        }
    }
    log::info!("wrote {} videos to {}", a.videos, a.out.display());
    Ok(())
}

fn load(data: &Path, split: &str, factor: usize) -> Result<Dataset> {
    Dataset::load(&Layout::new(data), Some(split), factor)
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let config = resolve_config(&a.cfg)?;
    let ds = load(&a.data, &a.split, config.downsample)?;
    let multi = train_restarts(&config, &ds.videos, ds.vocab.len(), a.cfg.jobs)?;
    ensure_dir(&a.out)?;
    let best = multi.best();
    write_file(&a.out.join("model.plnb"), &best.model.to_checkpoint())?;
    write_file(&a.out.join("config.txt"), config.to_text().as_bytes())?;
    let epochs: Vec<EpochRow> = best.curve.iter().map(EpochRow::from).collect();
    write_csv(&a.out.join("epochs.csv"), &epochs, EPOCH_HEADER)?;
    let restarts: Vec<RestartRow> = multi
        .runs
        .iter()
        .enumerate()
        .map(|(i, r)| RestartRow {
            run: i,
            seed: r.seed,
            final_loss: r.curve.last().map_or(f64::NAN, |e| e.loss.total),
            validation_acc_at1: r.validation.as_ref().map(|v| v.acc(1)),
            selected: i == multi.best,
        })
        .collect();
    write_csv(&a.out.join("restarts.csv"), &restarts, RESTART_HEADER)?;
    if let Some(v) = &best.validation {
        write_json(&a.out.join("validation.json"), v)?;
    }
    Ok(())
}

fn instances_with_ids(ids: &[String], videos: &[Video], alpha: f64, beta: f64) -> Result<Vec<(String, EvalInstance)>> {
    let mut out = Vec::with_capacity(videos.len());
    for (id, v) in ids.iter().zip(videos) {
        match make_eval_instance(v, alpha, beta) {
            Ok(i) => out.push((id.clone(), i)),
            Err(CoreError::Data(m)) => log::warn!("{id}: skipped ({m})"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(out)
}

fn dataset_name(data: &Path) -> String {
    data.file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("dataset")
        .to_string()
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let bytes = std::fs::read(&a.model).map_err(|e| Error::io(&a.model, e))?;
    let model = TrainedModel::from_checkpoint(&bytes)?;
    let ds = load(&a.data, &a.split, a.downsample)?;
    if ds.vocab.len() != model.num_classes() {
        return Err(CoreError::Data(format!(
            "dataset has {} actions but the checkpoint was trained on {}",
            ds.vocab.len(),
            model.num_classes()
        ))
        .into());
    }
    let name = a.name.clone().unwrap_or_else(|| dataset_name(&a.data));
    let mut rows: Vec<MetricsRow> = Vec::new();
    let mut reports = Vec::new();
    ensure_dir(&a.out)?;
    for &alpha in &a.alpha {
        for &beta in &a.beta {
            let inst = instances_with_ids(&ds.ids, &ds.videos, alpha, beta)?;
            if inst.is_empty() {
                return Err(CoreError::Data(format!("no video long enough to evaluate at alpha {alpha}, beta {beta}")).into());
            }
            let plain: Vec<EvalInstance> = inst.iter().map(|(_, i)| i.clone()).collect();
            let (report, preds) = model.evaluate(&plain, alpha, beta)?;
            let dir = a.out.join("predictions").join(format!("a{alpha}_b{beta}"));
            for ((id, _), p) in inst.iter().zip(&preds) {
                write_file(&dir.join(format!("{id}.txt")), prediction_text(p, &ds.vocab)?.as_bytes())?;
            }
            rows.extend(metrics_rows(&name, &report));
            reports.push(report);
        }
    }
    write_csv(&a.out.join("metrics.csv"), &rows, METRICS_HEADER)?;
    write_json(&a.out.join("metrics.json"), &MetricsFile { dataset: name, reports })?;
    Ok(())
}

fn train_test(data: &Path, train_split: &str, test_split: &str, c: &TrainConfig) -> Result<(Dataset, Vec<EvalInstance>)> {
    let tr = load(data, train_split, c.downsample)?;
    let te = load(data, test_split, c.downsample)?;
    if tr.vocab != te.vocab {
        return Err(CoreError::Data("train and test vocabularies differ".into()).into());
    }
    let inst = instances_with_ids(&te.ids, &te.videos, c.alpha, c.beta)?
        .into_iter()
        .map(|(_, i)| i)
        .collect();
    Ok((tr, inst))
}

pub fn run_ablate(a: &AblateArgs) -> Result<()> {
    let config = resolve_config(&a.cfg)?;
    let (tr, test) = train_test(&a.data, &a.train_split, &a.test_split, &config)?;
    let rows = ablate(&config, &tr.videos, &test, tr.vocab.len(), a.cfg.jobs)?;
    write_csv(&a.out, &rows, ABLATION_HEADER)
}

pub fn run_sweep(a: &SweepArgs) -> Result<()> {
    let config = resolve_config(&a.cfg)?;
    let (tr, test) = train_test(&a.data, &a.train_split, &a.test_split, &config)?;
    let rows: Vec<_> = sweep_threads(&config, &a.threads, &tr.videos, &test, tr.vocab.len(), a.cfg.jobs)?
        .into_iter()
        .map(|(r, _)| r)
        .collect();
    write_csv(&a.out, &rows, SWEEP_HEADER)
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let tables = a
        .inputs
        .iter()
        .map(|p| read_csv::<MetricsRow>(p, METRICS_HEADER))
        .collect::<Result<Vec<_>>>()?;
    let rows = merge_metrics(tables)?;
    ensure_dir(&a.out)?;
    write_csv(&a.out.join("report.csv"), &rows, METRICS_HEADER)?;
    write_json(&a.out.join("report.json"), &rows)
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => run_ablate(a),
        Command::SweepThreads(a) => run_sweep(a),
        Command::Report(a) => report(a),
    }
}

/// Parses `args` and runs the command; returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
