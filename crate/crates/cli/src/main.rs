use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tabgen::analysis::{capture_trace, residual_sigma, similarity_grid};
use tabgen::dataio::{load_csv, preprocess_with, PreprocessOptions, PreprocessedDataset, RawTable};
use tabgen::experiment::{
    analysis_rows, analyze_model, report, run_experiment, write_synthetic, write_train_report, ExperimentConfig,
};
use tabgen::metrics::{evaluate, MetricsConfig};
use tabgen::vae::{build_model, train_on, Component, ModelConfig, ModelVariant, TrainConfig, VaeModel};
use tabgen::{Error, Result};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Tabular VAEs with optional Transformer stacks: train, sample, score and
/// inspect representations.
#[derive(Parser)]
#[command(name = "tabgen", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the column maps and write a preprocessed dataset directory.
    Preprocess(PreprocessArgs),
    /// Train one variant and write a checkpoint directory.
    Train(TrainArgs),
    /// Sample synthetic rows from a checkpoint into a CSV.
    Sample(SampleArgs),
    /// Score a synthetic CSV against real rows.
    Evaluate(EvaluateArgs),
    /// CKA grid and residual scaling of one Transformer stack.
    Analyze(AnalyzeArgs),
    /// Rebuild summary, gain and Wilcoxon tables of a finished run.
    Report(ReportArgs),
    /// Run a full experiment from a JSON config. Any config field can be
    /// overridden by a flag of the same dotted name, e.g. `--train.epochs 50`.
    Run(RunArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Input CSV.
    #[arg(long)]
    data: PathBuf,
    /// Schema JSON for the CSV.
    #[arg(long)]
    schema: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.15)]
    val_fraction: f64,
    #[arg(long, default_value_t = 0.2)]
    test_fraction: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Preprocessed dataset directory.
    #[arg(long)]
    dataset: PathBuf,
    /// VAE, E-VAE, EL-VAE, ELD-VAE, LD-VAE or D-VAE.
    #[arg(long, default_value = "VAE")]
    variant: ModelVariant,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// Fixed batch size instead of the size rule.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Seed for initialization; training uses a derived stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Print the loss every N epochs (0 disables).
    #[arg(long, default_value_t = 10)]
    log_every: usize,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Preprocessed dataset directory the model was trained on.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    rows: usize,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Real training rows.
    #[arg(long)]
    real: PathBuf,
    /// Synthetic rows.
    #[arg(long)]
    syn: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Real held-out rows; without it a seeded 80/20 split of `--real` is used.
    #[arg(long)]
    test: Option<PathBuf>,
    /// Directory for metrics.json and pairs.csv.
    #[arg(long, default_value = "metrics")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional metrics config JSON (k, bins, grid, classifier, ...).
    #[arg(long)]
    metrics_config: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// enc, lat or dec.
    #[arg(long)]
    component: Component,
    /// Preprocessed dataset directory; its leading test rows are analyzed.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    rows: usize,
    /// Skip column centering before CKA.
    #[arg(long)]
    uncentered: bool,
    #[arg(long, default_value = "analysis")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory, `out/<run_id>`.
    #[arg(long)]
    run: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted overrides: `--train.epochs 50` or `--train.epochs=50`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDES")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("TABGEN_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("TABGEN_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Report(a) => cmd_report(a),
        Command::Run(a) => cmd_run(a),
    }
    .map(|()| ExitCode::SUCCESS)
    .or_else(|e| match e {
        CmdError::Failed(code) => Ok(code),
        CmdError::Lib(e) => Err(e),
    })
}

enum CmdError {
    Lib(Error),
    /// Already reported; exit with this code.
    Failed(ExitCode),
}

impl From<Error> for CmdError {
    fn from(e: Error) -> Self {
        CmdError::Lib(e)
    }
}

type CmdResult = std::result::Result<(), CmdError>;

fn cmd_preprocess(a: PreprocessArgs) -> CmdResult {
    let raw = load_csv(&a.data, &a.schema)?;
    let opts = PreprocessOptions {
        val_fraction: a.val_fraction,
        test_fraction: a.test_fraction,
        test_rows: None,
    };
    let ds = preprocess_with(&raw, a.seed, &opts)?;
    ds.save(&a.out)?;
    for d in &ds.dropped {
        eprintln!("dropped column `{}`: {:?}", d.name, d.reason);
    }
    eprintln!(
        "{} rows ({} train, {} val, {} test), width {}",
        ds.x.rows(),
        ds.splits.train.len(),
        ds.splits.val.len(),
        ds.splits.test.len(),
        ds.width()
    );
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let ds = PreprocessedDataset::load(&a.dataset)?;
    let cfg = ModelConfig { variant: a.variant, ..ModelConfig::default() };
    let mut model = build_model::<f32>(&ds.schema, &cfg, a.seed)?;
    let tcfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        ..TrainConfig::default()
    };
    let val = ds.val_x();
    let val = (val.rows() > 0).then_some(val);
    let log_every = a.log_every;
    let report = train_on(&mut model, &ds.train_x(), val.as_ref(), &tcfg, a.seed.wrapping_add(1), |r| {
        if log_every > 0 && (r.epoch % log_every == 0 || r.epoch == 1) {
            eprintln!("epoch {:>4}  loss {:.4}  recon {:.4}  kl {:.4}", r.epoch, r.train.total, r.train.recon, r.train.kl);
        }
    })?;
    model.save(&a.out)?;
    write_train_report(&report, &a.out.join("train.json"))?;
    eprintln!("{} trained for {} epochs in {:.1}s", a.variant, report.epochs.len(), report.seconds);
    println!("{}", a.out.display());
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> CmdResult {
    let model = VaeModel::<f32>::load(&a.checkpoint)?;
    let ds = PreprocessedDataset::load(&a.dataset)?;
    if model.width() != ds.width() {
        return Err(Error::Schema("checkpoint and dataset layouts differ".into()).into());
    }
    write_synthetic(&model, &ds, a.rows, a.seed, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

/// Fit the column maps on the real rows, holding out `test` (or a seeded
/// 20% split when absent).
fn real_dataset(real: &RawTable, test: Option<&RawTable>, seed: u64) -> Result<PreprocessedDataset> {
    match test {
        Some(t) => {
            let all = real.concat(t)?;
            let opts = PreprocessOptions {
                val_fraction: 0.0,
                test_fraction: 0.0,
                test_rows: Some((real.num_rows()..all.num_rows()).collect()),
            };
            preprocess_with(&all, seed, &opts)
        }
        None => {
            let opts = PreprocessOptions {
                val_fraction: 0.0,
                test_fraction: 0.2,
                test_rows: None,
            };
            preprocess_with(real, seed, &opts)
        }
    }
}

fn cmd_evaluate(a: EvaluateArgs) -> CmdResult {
    let real = load_csv(&a.real, &a.schema)?;
    let syn = load_csv(&a.syn, &a.schema)?;
    let test = a.test.as_ref().map(|p| load_csv(p, &a.schema)).transpose()?;
    let cfg = match &a.metrics_config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.display().to_string(),
                source: e,
            })?;
            serde_json::from_str::<MetricsConfig>(&text).map_err(Error::from)?
        }
        None => MetricsConfig::default(),
    };
    let ds = real_dataset(&real, test.as_ref(), a.seed)?;
    let syn_x = ds.transform(&syn)?;
    let rep = evaluate(&ds.train_x(), &syn_x, &ds.test_x(), &ds, &cfg, a.seed)?;
    rep.write(&a.out)?;
    for (name, v) in rep.scores() {
        eprintln!("{name:<22} {v:.4}");
    }
    if let Some(note) = &rep.ml_note {
        eprintln!("note: {note}");
    }
    println!("{}", a.out.join("metrics.json").display());
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> CmdResult {
    let model = VaeModel::<f32>::load(&a.checkpoint)?;
    let variant = model.variant();
    if !variant.has(a.component) {
        return Err(Error::InvalidArgument(format!("{variant} has no {} Transformer", a.component.as_str())).into());
    }
    let Some(dataset) = &a.dataset else {
        return Err(Error::InvalidArgument("--dataset is required to pick the analyzed rows".into()).into());
    };
    let ds = PreprocessedDataset::load(dataset)?;
    let x = analysis_rows(&ds, a.rows);
    let files = analyze_model(&model, &x, &[a.component], !a.uncentered, &a.out)?;
    let trace = capture_trace(&model, &x, a.component)?;
    let grid = similarity_grid(&trace, a.component, !a.uncentered)?;
    let sigma = residual_sigma(&trace)?;
    eprintln!("{} labels over {} rows", grid.labels.len(), x.rows());
    for b in &sigma.blocks {
        eprintln!("block {} sigma median {:.4}", b.block, b.summary.median);
    }
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> CmdResult {
    let out = report(&a.run)?;
    for n in &out.notes {
        eprintln!("{n}");
    }
    for f in out.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(key) = a.strip_prefix("--") else {
            return Err(Error::InvalidArgument(format!("expected `--field value`, got `{a}`")));
        };
        match key.split_once('=') {
            Some((k, v)) => out.push((k.to_string(), v.to_string())),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::InvalidArgument(format!("`--{key}` needs a value")))?;
                out.push((key.to_string(), v.clone()));
            }
        }
    }
    Ok(out)
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::from_file(p).map_err(|e| match e {
            Error::Json(j) => Error::InvalidArgument(format!("{}: {j}", p.display())),
            other => other,
        }),
        None => Ok(ExperimentConfig::default()),
    }
}

fn cmd_run(a: RunArgs) -> CmdResult {
    let cfg = load_config(a.config.as_deref())?.with_overrides(&parse_overrides(&a.overrides)?)?;
    let manifest = run_experiment(&cfg)?;
    let dir = cfg.output_dir.join(&manifest.run_id);
    for s in &manifest.stages {
        let scope = [s.dataset.as_deref(), s.variant.as_deref()]
            .into_iter()
            .flatten()
            .collect::<Vec<_>>()
            .join("/");
        eprintln!("{:<10} {:<28} {:?} {:.1}s", s.stage, scope, s.status, s.seconds);
        if let Some(m) = &s.message {
            eprintln!("           {m}");
        }
    }
    println!("{}", dir.join("manifest.json").display());
    if manifest.succeeded() {
        Ok(())
    } else {
        Err(CmdError::Failed(ExitCode::from(2)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn override_forms() {
        let args: Vec<String> = ["--train.epochs", "5", "--run_id=x"].iter().map(|s| s.to_string()).collect();
        let o = parse_overrides(&args).unwrap();
        assert_eq!(o, vec![("train.epochs".into(), "5".into()), ("run_id".into(), "x".into())]);
        assert!(parse_overrides(&["epochs".to_string()]).is_err());
        assert!(parse_overrides(&["--epochs".to_string()]).is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
