//! Command-line front end: synth, train, evaluate, recommend, gradcheck and sweep-beta.

use std::collections::{BTreeSet, HashMap};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::cf_core::Variant;
use crate::corpus_io::{load_checkpoint, load_tsc_corpus, load_visual_features, save_checkpoint, VisualFeatureTable};
use crate::data_model::{Dataset, TimeSyncComment};
use crate::error::{Error, Result};
use crate::evaluator::{self, MetricsReport};
use crate::hea_attention::{AttentionMode, AttentionTrace};
use crate::model::attention_trace;
use crate::synth_gen::{self, SynthConfig};
use crate::trainer::{build_examples, fit_with_validation, gradient_check, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub const LOSS_LOG_FILE: &str = "loss.csv";
pub const SWEEP_HEADER: &str = "beta,m,topx,precision,recall,f1";

#[derive(Debug, Parser)]
#[command(name = "herdrec", version, about = "Time-sync comment video recommenders")]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with controllable herding.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Score a test corpus and write Top-X metrics as JSON.
    Evaluate(EvaluateArgs),
    /// Print one user's top videos.
    Recommend(RecommendArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate one model per (beta, M) grid point.
    SweepBeta(SweepArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 30)]
    pub users: usize,
    #[arg(long, default_value_t = 60)]
    pub videos: usize,
    #[arg(long, default_value_t = 5000)]
    pub comments: usize,
    #[arg(long, default_value_t = 128)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub herd_prob: f64,
    /// Seconds.
    #[arg(long, default_value_t = 10.0)]
    pub herd_window: f64,
    #[arg(long, default_value_t = 200)]
    pub pos_vocab: usize,
    #[arg(long, default_value_t = 200)]
    pub neg_vocab: usize,
    #[arg(long, default_value_t = 64)]
    pub visual_dim: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Hyperparameters shared by train and sweep-beta.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// JSON file with TrainConfig fields; flags given on the command line win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One of tm, t-hea, itf, itf-hea.
    #[arg(long, default_value = "itf-hea")]
    pub variant: Variant,
    /// Feature dimension (even).
    #[arg(long, default_value_t = 128)]
    pub d: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// literal or masked.
    #[arg(long, default_value = "literal")]
    pub hea_mode: AttentionMode,
    /// Tokens seen fewer times map to <unk>.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    /// Tensor names excluded from updates.
    #[arg(long, value_delimiter = ',')]
    pub frozen: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Frame feature table; required by itf and itf-hea.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Time-decay rate.
    #[arg(long, default_value_t = 0.2)]
    pub beta: f64,
    /// Context window size.
    #[arg(long, visible_alias = "context-size", default_value_t = 10)]
    pub m: usize,
    /// Held-out corpus whose loss is logged per epoch.
    #[arg(long)]
    pub valid_corpus: Option<PathBuf>,
    /// Stop after this many epochs without validation improvement.
    #[arg(long, requires = "valid_corpus")]
    pub patience: Option<usize>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Write attention traces of training comments to this JSON file.
    #[arg(long)]
    pub dump_attention: Option<PathBuf>,
    /// Number of comments to include in the attention dump.
    #[arg(long, default_value_t = 100)]
    pub dump_limit: usize,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub test_corpus: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    pub topx: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for uniformity; evaluation draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub user: String,
    #[arg(long, default_value_t = 10)]
    pub topx: usize,
    /// Candidates default to the user's videos in this corpus.
    #[arg(long)]
    pub test_corpus: Option<PathBuf>,
    /// Comma-separated video ids; overrides the default candidates.
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<String>>,
    /// Also write the ranking as JSON to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Accepted for uniformity; ranking draws no random numbers.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_delimiter = ',', default_value = "tm,t-hea,itf,itf-hea")]
    pub variant: Vec<Variant>,
    #[arg(long, default_value_t = 8)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    #[arg(long, default_value_t = 0.2)]
    pub beta: f64,
    #[arg(long, default_value = "literal")]
    pub hea_mode: AttentionMode,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the per-tensor report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub test_corpus: PathBuf,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5")]
    pub betas: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    pub ms: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "5,10,20")]
    pub topx: Vec<usize>,
    /// Grid points trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// CSV output path.
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit code and files written by one command.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandResult {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    pub summary: String,
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::InvalidArgument(_) | Error::Config(_) => EXIT_USAGE,
        e if e.is_data_error() => EXIT_DATA,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code. Output goes to stdout, diagnostics to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_USAGE;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let sub = matches.subcommand().map(|(_, m)| m).expect("subcommand is required");
    match execute(&cli.command, sub) {
        Ok(result) => {
            println!("{}", result.summary);
            result.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

pub fn execute(command: &Command, matches: &ArgMatches) -> Result<CommandResult> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a, matches),
        Command::Evaluate(a) => evaluate(a),
        Command::Recommend(a) => recommend(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::SweepBeta(a) => sweep(a, matches),
    }
}

fn from_cli(matches: &ArgMatches, id: &str) -> bool {
    matches.value_source(id) == Some(ValueSource::CommandLine)
}

/// The config file (or defaults) with explicitly given flags laid over it.
pub fn merge_train_config(model: &ModelArgs, matches: &ArgMatches) -> Result<TrainConfig> {
    let mut cfg = match &model.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::default(),
    };
    let file_given = model.config.is_some();
    let take = |id: &str| !file_given || from_cli(matches, id);
    if take("variant") {
        cfg.variant = model.variant;
    }
    if take("d") {
        cfg.d = model.d;
    }
    if take("lr") {
        cfg.learning_rate = model.lr;
    }
    if take("epochs") {
        cfg.epochs = model.epochs;
    }
    if take("batch_size") {
        cfg.batch_size = model.batch_size;
    }
    if take("seed") {
        cfg.seed = model.seed;
    }
    if take("hea_mode") {
        cfg.hea_mode = model.hea_mode;
    }
    if take("min_count") {
        cfg.min_count = model.min_count;
    }
    if from_cli(matches, "frozen") {
        cfg.frozen = model.frozen.clone();
    }
    if matches.try_contains_id("beta").unwrap_or(false) {
        if take("beta") {
            cfg.beta = *matches.get_one::<f64>("beta").expect("beta has a default");
        }
        if take("m") {
            cfg.m = *matches.get_one::<usize>("m").expect("m has a default");
        }
    }
    if matches.try_contains_id("patience").unwrap_or(false) && from_cli(matches, "patience") {
        cfg.patience = matches.get_one::<usize>("patience").copied();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn synth(a: &SynthArgs) -> Result<CommandResult> {
    let config = SynthConfig {
        n_users: a.users,
        n_videos: a.videos,
        n_comments: a.comments,
        latent_dim: a.latent_dim,
        herd_prob: a.herd_prob,
        herd_window: a.herd_window,
        pos_vocab: a.pos_vocab,
        neg_vocab: a.neg_vocab,
        visual_dim: a.visual_dim,
        seed: a.seed,
    };
    let corpus = synth_gen::generate(&config)?;
    let artifacts = synth_gen::write_synth_corpus(&a.out, &corpus)?;
    let all: Vec<TimeSyncComment> = corpus.train.iter().chain(&corpus.test).cloned().collect();
    let rate = synth_gen::measure_herding(&all, config.herd_window)?;
    Ok(CommandResult {
        exit_code: EXIT_OK,
        artifacts,
        summary: format!(
            "synth: {} train and {} test comments written to {} (copy rate {rate:.3})",
            corpus.train.len(),
            corpus.test.len(),
            a.out.display()
        ),
    })
}

fn load_corpus(path: &Path) -> Result<Dataset> {
    let (dataset, report) = load_tsc_corpus(path)?;
    if !report.rejected.is_empty() {
        warn!("{}: rejected {} of {} records", path.display(), report.rejected.len(), report.records);
    }
    Ok(dataset)
}

fn load_features(path: Option<&PathBuf>, variant: Variant) -> Result<Option<VisualFeatureTable>> {
    match path {
        Some(p) if variant.uses_visual() => {
            let (table, report) = load_visual_features(p)?;
            for w in &report.warnings {
                warn!("{}: {w}", p.display());
            }
            Ok(Some(table))
        }
        Some(_) => {
            info!("variant {variant} ignores visual features");
            Ok(None)
        }
        None if variant.uses_visual() => Err(Error::Config(format!("variant {variant} needs --features"))),
        None => Ok(None),
    }
}

#[derive(Serialize)]
struct AttentionDump<'a> {
    tsc_id: &'a str,
    trace: AttentionTrace,
}

fn train(a: &TrainArgs, matches: &ArgMatches) -> Result<CommandResult> {
    let cfg = merge_train_config(&a.model, matches)?;
    if a.dump_attention.is_some() && !cfg.variant.uses_attention() {
        return Err(Error::Config(format!("--dump-attention needs an attention variant, not {}", cfg.variant)));
    }
    let dataset = load_corpus(&a.corpus)?;
    let visual = load_features(a.features.as_ref(), cfg.variant)?;
    let valid = a.valid_corpus.as_deref().map(load_corpus).transpose()?;
    let model = fit_with_validation(&dataset, visual.as_ref(), &cfg, valid.as_ref())?;

    let mut artifacts = save_checkpoint(&a.out, &model.to_checkpoint())?;
    let extras = (|| -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let loss_path = a.out.join(LOSS_LOG_FILE);
        fs::write(&loss_path, model.loss_csv()).map_err(|e| Error::io(&loss_path, e))?;
        written.push(loss_path);
        if let Some(path) = &a.dump_attention {
            let users: HashMap<&str, usize> = model.users.iter().enumerate().map(|(i, u)| (u.as_str(), i)).collect();
            let videos: HashMap<&str, usize> = model.videos.iter().enumerate().map(|(i, v)| (v.as_str(), i)).collect();
            let (examples, _) = build_examples(&dataset, &model.vocab, &users, &videos, visual.as_ref(), &model.spec)?;
            let mut dump = Vec::new();
            for ex in examples.iter().take(a.dump_limit) {
                if let Some(trace) = attention_trace(&model.spec, &model.params, ex)? {
                    dump.push(AttentionDump { tsc_id: &ex.tsc_id, trace });
                }
            }
            fs::write(path, serde_json::to_vec(&dump)?).map_err(|e| Error::io(path, e))?;
            written.push(path.clone());
        }
        Ok(written)
    })();
    match extras {
        Ok(paths) => artifacts.extend(paths),
        Err(e) => {
            let _ = fs::remove_dir_all(&a.out);
            return Err(e);
        }
    }
    let first = model.loss_log.first().map_or(f64::NAN, |e| e.mean_loss);
    let last = model.loss_log.last().map_or(f64::NAN, |e| e.mean_loss);
    Ok(CommandResult {
        exit_code: EXIT_OK,
        artifacts,
        summary: format!(
            "train: {} for {} epochs, loss {first:.6} -> {last:.6}, checkpoint {}",
            cfg.variant,
            model.loss_log.len(),
            a.out.display()
        ),
    })
}

fn evaluate(a: &EvaluateArgs) -> Result<CommandResult> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let test = load_corpus(&a.test_corpus)?;
    let report = evaluator::evaluate(&ckpt, &test.comments, &a.topx)?;
    write_json(&a.out, &report)?;
    let parts: Vec<String> = report
        .topx
        .iter()
        .map(|m| format!("top-{} P={:.4} R={:.4} F1={:.4}", m.x, m.precision, m.recall, m.f1))
        .collect();
    Ok(CommandResult {
        exit_code: EXIT_OK,
        artifacts: vec![a.out.clone()],
        summary: format!("evaluate: {}", parts.join(", ")),
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct Ranked<'a> {
    video_id: &'a str,
    score: f64,
}

fn recommend(a: &RecommendArgs) -> Result<CommandResult> {
    let ckpt = load_checkpoint(&a.checkpoint)?;
    if ckpt.user_index(&a.user).is_none() {
        return Err(Error::UnknownEntity {
            kind: "user",
            id: a.user.clone(),
        });
    }
    let candidates: Vec<String> = match (&a.candidates, &a.test_corpus) {
        (Some(c), _) => c.clone(),
        (None, Some(path)) => {
            let test = load_corpus(path)?;
            let own: BTreeSet<&str> = test
                .comments
                .iter()
                .filter(|c| c.user_id == a.user)
                .map(|c| c.video_id.as_str())
                .collect();
            own.into_iter().map(str::to_string).collect()
        }
        (None, None) => ckpt.videos.clone(),
    };
    let ranked = evaluator::recommend(&ckpt, &a.user, a.topx, &candidates)?;
    let rows: Vec<Ranked> = ranked.iter().map(|(v, s)| Ranked { video_id: v, score: *s }).collect();
    let mut artifacts = Vec::new();
    if let Some(out) = &a.out {
        write_json(out, &rows)?;
        artifacts.push(out.clone());
    }
    Ok(CommandResult {
        exit_code: EXIT_OK,
        artifacts,
        summary: serde_json::to_string(&rows)?,
    })
}

fn gradcheck(a: &GradcheckArgs) -> Result<CommandResult> {
    let mut reports = Vec::new();
    for &variant in &a.variant {
        let cfg = TrainConfig {
            d: a.d,
            m: a.m,
            beta: a.beta,
            hea_mode: a.hea_mode,
            seed: a.seed,
            variant,
            ..TrainConfig::default()
        };
        reports.push(gradient_check(&cfg, a.tolerance)?);
    }
    let mut artifacts = Vec::new();
    if let Some(out) = &a.out {
        write_json(out, &reports)?;
        artifacts.push(out.clone());
    }
    let passed = reports.iter().all(|r| r.passed());
    let parts: Vec<String> = reports
        .iter()
        .map(|r| format!("{} {:.2e}", r.variant, r.max_rel_error()))
        .collect();
    Ok(CommandResult {
        exit_code: if passed { EXIT_OK } else { EXIT_RUNTIME },
        artifacts,
        summary: format!(
            "gradcheck {}: max relative error {} (tolerance {:e})",
            if passed { "passed" } else { "FAILED" },
            parts.join(", "),
            a.tolerance
        ),
    })
}

/// One CSV row of a beta/M sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub beta: f64,
    pub m: usize,
    pub topx: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Sweep grid and parallelism.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub betas: Vec<f64>,
    pub ms: Vec<usize>,
    pub topx: Vec<usize>,
    pub jobs: usize,
}

/// Trains and evaluates one model per (beta, M) point, all with `base.seed`.
/// Rows come back in grid order (beta-major) whatever `jobs` is.
pub fn sweep_beta(
    train: &Dataset,
    test: &[TimeSyncComment],
    visual: Option<&VisualFeatureTable>,
    base: &TrainConfig,
    grid: &SweepGrid,
) -> Result<Vec<SweepRow>> {
    let SweepGrid { betas, ms, topx, jobs } = grid;
    let (topx, jobs) = (topx.as_slice(), *jobs);
    if betas.is_empty() || ms.is_empty() || topx.is_empty() {
        return Err(Error::InvalidArgument("sweep grid and top-X list must be nonempty".into()));
    }
    if jobs == 0 {
        return Err(Error::InvalidArgument("--jobs must be at least 1".into()));
    }
    let points: Vec<(f64, usize)> = betas.iter().flat_map(|&b| ms.iter().map(move |&m| (b, m))).collect();
    let point = |&(beta, m): &(f64, usize)| -> Result<MetricsReport> {
        let cfg = TrainConfig { beta, m, ..base.clone() };
        let model = fit_with_validation(train, visual, &cfg, None)?;
        let report = evaluator::evaluate(&model.to_checkpoint(), test, topx)?;
        info!("sweep point beta={beta} m={m} done");
        Ok(report)
    };
    let reports: Vec<MetricsReport> = if jobs == 1 {
        points.iter().map(point).collect::<Result<_>>()?
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} workers: {e}")))?;
        pool.install(|| points.par_iter().map(point).collect::<Result<_>>())?
    };
    let mut rows = Vec::with_capacity(points.len() * topx.len());
    for (&(beta, m), report) in points.iter().zip(&reports) {
        for metrics in &report.topx {
            rows.push(SweepRow {
                beta,
                m,
                topx: metrics.x,
                precision: metrics.precision,
                recall: metrics.recall,
                f1: metrics.f1,
            });
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.beta, r.m, r.topx, r.precision, r.recall, r.f1));
    }
    s
}

fn sweep(a: &SweepArgs, matches: &ArgMatches) -> Result<CommandResult> {
    let cfg = merge_train_config(&a.model, matches)?;
    let train = load_corpus(&a.corpus)?;
    let test = load_corpus(&a.test_corpus)?;
    let visual = load_features(a.features.as_ref(), cfg.variant)?;
    let grid = SweepGrid {
        betas: a.betas.clone(),
        ms: a.ms.clone(),
        topx: a.topx.clone(),
        jobs: a.jobs,
    };
    let rows = sweep_beta(&train, &test.comments, visual.as_ref(), &cfg, &grid)?;
    fs::write(&a.out, sweep_csv(&rows)).map_err(|e| Error::io(&a.out, e))?;
    Ok(CommandResult {
        exit_code: EXIT_OK,
        artifacts: vec![a.out.clone()],
        summary: format!(
            "sweep-beta: {} grid points, {} rows written to {}",
            a.betas.len() * a.ms.len(),
            rows.len(),
            a.out.display()
        ),
    })
}
