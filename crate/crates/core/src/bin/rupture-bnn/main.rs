//! Command-line front end: `generate | train | evaluate | importance`.
//!
//! Exit codes: 0 on success, 1 for data or model errors, 2 for usage errors.

mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use rupture_bnn::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use rupture_bnn::data::{generate_synthetic, load_csv, write_csv, GeneratorConfig, LabeledTable, FEATURE_NAMES};
use rupture_bnn::importance::{importance_csv, permutation_importance, DEFAULT_REPEATS, ImportanceRow};
use rupture_bnn::inference::{histogram_csv, DEFAULT_POSTERIOR_SAMPLES};
use rupture_bnn::model::{density_csv, prior_posterior_density, weight_summary, weight_summary_csv};
use rupture_bnn::pipeline::{
    evaluate, fit, standardize_for, test_fold, Evaluation, FitConfig, DEFAULT_HISTOGRAM_BINS,
    DEFAULT_TRAIN_COUNT, IMPORTANCE_STREAM,
};
use rupture_bnn::train::{BatchSize, TrainConfig};
use rupture_bnn::util::write_atomic;
use rupture_bnn::RandomSource;

use settings::Settings;

pub enum CliError {
    Usage(String),
    Run(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Run(e)
    }
}

impl From<rupture_bnn::Error> for CliError {
    fn from(e: rupture_bnn::Error) -> Self {
        CliError::Run(e.into())
    }
}

#[derive(Parser)]
#[command(name = "rupture-bnn", version, about = "Bayesian neural network rupture classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// `key = value` config file; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Primary output file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic rupture dataset as CSV.
    Generate(GenerateArgs),
    /// Split, standardize, upsample and train; writes a checkpoint.
    Train(TrainArgs),
    /// Posterior predictive evaluation of a checkpoint on its test fold.
    Evaluate(EvaluateArgs),
    /// Permutation feature importance with per-class uncertainty.
    Importance(ImportanceArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Number of rows.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    n: Option<u64>,
    #[arg(long)]
    s_crit: Option<f64>,
    #[arg(long)]
    geom_coupling: Option<f64>,
    #[arg(long)]
    energy_coeff: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Labeled CSV dataset.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Training-history CSV (default: `<out>.history.csv`).
    #[arg(long)]
    history: Option<PathBuf>,
    /// Directory for weight-summary and prior/posterior density CSVs.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    decay_rate: Option<f64>,
    /// Rows per minibatch, or `full`.
    #[arg(long)]
    batch_size: Option<String>,
    /// Monte-Carlo samples per ELBO estimate.
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long)]
    kl_scale: Option<f64>,
    #[arg(long)]
    train_count: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Skip minority-class upsampling.
    #[arg(long)]
    no_upsample: bool,
}

#[derive(Args)]
struct TestSelector {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset used for training; the test fold is rebuilt from the
    /// checkpoint's split record.
    #[arg(long, conflicts_with = "test")]
    data: Option<PathBuf>,
    /// Explicit test CSV, used whole.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Posterior samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Fixed decision threshold instead of optimizing on the test labels.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    select: TestSelector,
    /// Histogram CSV (default: `<out>.histogram.csv`).
    #[arg(long)]
    histogram: Option<PathBuf>,
    #[arg(long)]
    bins: Option<usize>,
    /// Also run permutation importance with this many repeats and embed it.
    #[arg(long)]
    importance_repeats: Option<usize>,
}

#[derive(Args)]
struct ImportanceArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    select: TestSelector,
    #[arg(long)]
    repeats: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Importance(args) => cmd_importance(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn required<T>(value: Option<T>, what: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required value: {what}")))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    write_atomic(path, contents.as_bytes())
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<(), CliError> {
    let settings = Settings::load(args.common.config.as_deref())?;
    let n = settings.or(args.n, "n", 2000)?;
    if n < 1 {
        return Err(CliError::Usage("n must be at least 1".into()));
    }
    let seed = settings.or(args.common.seed, "seed", 0)?;
    let out = required(settings.pick(args.common.out, "out")?, "--out")?;
    let mut config = GeneratorConfig::default();
    config
        .apply_overrides(settings.entries())
        .map_err(|e| CliError::Usage(e.to_string()))?;
    for (flag, slot) in [
        (args.s_crit, &mut config.s_crit),
        (args.geom_coupling, &mut config.geom_coupling),
        (args.energy_coeff, &mut config.energy_coeff),
    ] {
        if let Some(v) = flag {
            *slot = v;
        }
    }

    let table = generate_synthetic(n as usize, &RandomSource::new(seed, 0), &config)?;
    write_csv(&table, &out).with_context(|| format!("writing {}", out.display()))?;
    let (arrested, propagated) = table.class_counts();
    println!(
        "wrote {} rows to {}: arrested {} ({:.1}%), propagated {} ({:.1}%)",
        table.n_rows(),
        out.display(),
        arrested,
        100.0 * arrested as f64 / n as f64,
        propagated,
        100.0 * propagated as f64 / n as f64,
    );
    Ok(())
}

fn parse_batch_size(raw: &str) -> Result<BatchSize, CliError> {
    if raw.eq_ignore_ascii_case("full") {
        return Ok(BatchSize::Full);
    }
    match raw.parse::<usize>() {
        Ok(n) if n >= 1 => Ok(BatchSize::Rows(n)),
        _ => Err(CliError::Usage(format!("batch size must be `full` or a positive integer, got {raw:?}"))),
    }
}

fn load_dataset(path: &Path) -> Result<LabeledTable, CliError> {
    Ok(load_csv(path, &FEATURE_NAMES).with_context(|| format!("loading {}", path.display()))?)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let settings = Settings::load(args.common.config.as_deref())?;
    let data_path = required(settings.pick(args.data, "data")?, "--data")?;
    let out = settings.or(args.common.out, "out", PathBuf::from("checkpoint.json"))?;
    let history_path = settings
        .pick(args.history, "history")?
        .unwrap_or_else(|| sibling(&out, ".history.csv"));
    let defaults = TrainConfig::default();
    let batch_size = match settings.pick(args.batch_size, "batch_size")? {
        Some(raw) => parse_batch_size(&raw)?,
        None => defaults.batch_size,
    };
    let hidden = settings.or(args.hidden, "hidden", 12)?;
    let upsample = !args.no_upsample && settings.or(None, "upsample", true)?;
    let config = FitConfig {
        seed: settings.or(args.common.seed, "seed", 0)?,
        train_count: settings.or(args.train_count, "train_count", DEFAULT_TRAIN_COUNT)?,
        upsample,
        layer_sizes: vec![FEATURE_NAMES.len(), hidden, 1],
        train: TrainConfig {
            initial_learning_rate: settings.or(args.learning_rate, "learning_rate", defaults.initial_learning_rate)?,
            decay_rate: settings.or(args.decay_rate, "decay_rate", defaults.decay_rate)?,
            epochs: settings.or(args.epochs, "epochs", defaults.epochs)?,
            batch_size,
            elbo_mc_samples: settings.or(args.mc_samples, "mc_samples", defaults.elbo_mc_samples)?,
            kl_scale: settings.pick(args.kl_scale, "kl_scale")?,
            seed: 0,
        },
    };
    config
        .train
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let table = load_dataset(&data_path)?;
    let fitted = fit(&table, &config)?;
    save_checkpoint(&fitted.checkpoint, &out).with_context(|| format!("writing {}", out.display()))?;
    write_file(&history_path, &fitted.history.to_csv())?;
    if let Some(dir) = settings.pick(args.diagnostics, "diagnostics")? {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let model = &fitted.checkpoint.model;
        write_file(&dir.join("weights.csv"), &weight_summary_csv(&weight_summary(model)))?;
        write_file(&dir.join("density.csv"), &density_csv(&prior_posterior_density(model, 40)?))?;
    }

    let (neg, pos) = fitted.data.train.class_counts();
    println!(
        "trained on {} rows ({} arrested / {} propagated after upsampling), {} test rows held out",
        fitted.data.train.n_rows(),
        neg,
        pos,
        fitted.data.test.n_rows()
    );
    if let Some(last) = fitted.history.records.last() {
        println!(
            "final epoch {}: elbo {:.4} (ll {:.4}, kl {:.4}, lr {:.5})",
            last.epoch, last.elbo, last.likelihood, last.kl, last.learning_rate
        );
    }
    println!("train F1 (propagated, threshold 0.5): {:.4}", fitted.train_f1);
    println!("checkpoint: {}", out.display());
    println!("history: {}", history_path.display());
    Ok(())
}

struct Selected {
    checkpoint: Checkpoint,
    test: LabeledTable,
    seed: u64,
    samples: usize,
}

fn select_test(common: &Common, select: &TestSelector, settings: &Settings) -> Result<Selected, CliError> {
    let ckpt_path = required(settings.pick(select.checkpoint.clone(), "checkpoint")?, "--checkpoint")?;
    let checkpoint = load_checkpoint(&ckpt_path)
        .with_context(|| format!("loading {}", ckpt_path.display()))?;
    let data = settings.pick(select.data.clone(), "data")?;
    let test_path = settings.pick(select.test.clone(), "test")?;
    let test = match (test_path, data) {
        (Some(path), _) => standardize_for(&checkpoint, &load_dataset(&path)?)?,
        (None, Some(path)) => test_fold(&load_dataset(&path)?, &checkpoint)?,
        (None, None) => return Err(CliError::Usage("one of --data or --test is required".into())),
    };
    let default_seed = checkpoint.split.map_or(0, |s| s.seed);
    let samples = settings.or(select.samples, "samples", DEFAULT_POSTERIOR_SAMPLES)?;
    if samples < 2 {
        return Err(CliError::Usage("--samples must be at least 2".into()));
    }
    if samples < 30 {
        eprintln!("warning: {samples} posterior samples; uncertainty estimates are unreliable");
    }
    Ok(Selected {
        seed: settings.or(common.seed, "seed", default_seed)?,
        checkpoint,
        test,
        samples,
    })
}

fn run_importance(sel: &Selected, eval: &Evaluation, repeats: usize) -> Result<Vec<ImportanceRow>, CliError> {
    Ok(permutation_importance(
        &sel.checkpoint.model,
        &sel.test,
        eval.report.threshold,
        sel.samples,
        &RandomSource::new(sel.seed, IMPORTANCE_STREAM),
        repeats,
    )?)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), CliError> {
    let settings = Settings::load(args.common.config.as_deref())?;
    let sel = select_test(&args.common, &args.select, &settings)?;
    let out = settings.or(args.common.out, "out", PathBuf::from("report.json"))?;
    let hist_path = settings
        .pick(args.histogram, "histogram")?
        .unwrap_or_else(|| sibling(&out, ".histogram.csv"));
    let bins = settings.or(args.bins, "bins", DEFAULT_HISTOGRAM_BINS)?;
    if bins < 2 {
        return Err(CliError::Usage("--bins must be at least 2".into()));
    }
    let threshold = settings.pick(args.select.threshold, "threshold")?;
    let mut eval = evaluate(&sel.checkpoint.model, &sel.test, sel.samples, sel.seed, threshold, bins)?;
    if let Some(repeats) = settings.pick(args.importance_repeats, "importance_repeats")? {
        eval.report.importance = Some(run_importance(&sel, &eval, repeats)?);
    }
    let json = eval.report.to_json()?;
    write_file(&out, &json)?;
    write_file(&hist_path, &histogram_csv(&eval.report.histogram))?;
    print!("{json}");
    Ok(())
}

fn cmd_importance(args: ImportanceArgs) -> Result<(), CliError> {
    let settings = Settings::load(args.common.config.as_deref())?;
    let sel = select_test(&args.common, &args.select, &settings)?;
    let out = settings.or(args.common.out, "out", PathBuf::from("importance.csv"))?;
    let repeats = settings.or(args.repeats, "repeats", DEFAULT_REPEATS)?;
    if repeats < 1 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let threshold = settings.pick(args.select.threshold, "threshold")?;
    let eval = evaluate(&sel.checkpoint.model, &sel.test, sel.samples, sel.seed, threshold, 2)?;
    let rows = run_importance(&sel, &eval, repeats)?;
    let csv = importance_csv(&rows);
    write_file(&out, &csv)?;
    println!("threshold {:.4} (baseline weighted F1 {:.4})", eval.report.threshold, eval.report.weighted_average.f1);
    print!("{csv}");
    Ok(())
}
