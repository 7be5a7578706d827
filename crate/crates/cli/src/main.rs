//! `cepf`: backtests, grid search, synthetic panels and reports from a TOML
//! config.
//!
//! Exit status is 0 on success, 1 when any backtest cell failed (or on a
//! runtime error) and 2 on a configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use conformal_epf::dataset::{generate_synthetic, write_panel_csv};
use conformal_epf::pipeline::{
    emit_report, grid_search, read_results, read_weights, run_backtest, Overrides, PipelineError,
    ReportFormat, RunConfig,
};

#[derive(Parser)]
#[command(name = "cepf", version, about = "Conformal backtests for day-ahead price forecasts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured cell and write results, predictions and weights.
    Backtest(RunArgs),
    /// Select base-model hyperparameters on the validation range.
    Gridsearch(RunArgs),
    /// Write the configured synthetic panel as a price CSV.
    Synth(RunArgs),
    /// Re-emit a results table, optionally with plot data.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated hours, e.g. `3,8,13`.
    #[arg(long, value_delimiter = ',')]
    hours: Option<Vec<u8>>,
    /// Comma-separated target coverages, e.g. `0.8,0.9`.
    #[arg(long, value_delimiter = ',')]
    levels: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct ReportArgs {
    /// Results table written by `backtest` (csv or json).
    #[arg(long)]
    results: PathBuf,
    /// Weight history for the weight-path plot data.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    plot_data: bool,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        if e.is_config() {
            Self::Config(e.into())
        } else {
            Self::Runtime(e.into())
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

fn load(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.apply(&Overrides {
        seed: args.seed,
        output_dir: args.out.clone(),
        hours: args.hours.clone(),
        levels: args.levels.clone(),
    });
    cfg.validate()?;
    Ok(cfg)
}

fn backtest(args: &RunArgs) -> Result<bool, Failure> {
    let cfg = load(args)?;
    let out = run_backtest(&cfg)?;
    let dir = &cfg.run.output_dir;
    out.write(&cfg, dir)?;
    eprintln!(
        "run {}: {} cells, {} result rows, {} protocol violations -> {}",
        out.run_id,
        out.cells,
        out.rows.len(),
        out.spy_violations,
        dir.display()
    );
    for f in &out.failures {
        eprintln!("cell failed: {}: {}", f.cell, f.error);
    }
    Ok(out.failures.is_empty())
}

fn gridsearch(args: &RunArgs) -> Result<bool, Failure> {
    let cfg = load(args)?;
    let report = grid_search(&cfg)?;
    let dir = &cfg.run.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("selection.json");
    report.write(&path)?;
    for (name, sel) in &report.models {
        let c = &sel.candidates[sel.selected];
        eprintln!("{name}: selected candidate {} (score {:.6})", sel.selected, c.score);
    }
    eprintln!("wrote {}", path.display());
    Ok(true)
}

fn synth(args: &RunArgs) -> Result<bool, Failure> {
    let cfg = load(args)?;
    let panel = generate_synthetic(&cfg.dataset.synthetic).map_err(|e| Failure::Config(e.into()))?;
    let dir = &cfg.run.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("panel.csv");
    write_panel_csv(&panel, &path).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {} days x {} hours to {}", panel.n_days(), panel.hours().len(), path.display());
    Ok(true)
}

fn report(args: &ReportArgs) -> Result<bool, Failure> {
    let rows = read_results(&args.results)?;
    let weights = match &args.weights {
        Some(p) => read_weights(p)?,
        None => Vec::new(),
    };
    let format = match args.format {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    let files = emit_report(&rows, &weights, Path::new(&args.out), format, args.plot_data)?;
    eprintln!("wrote {}", files.results.display());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Backtest(a) => backtest(a),
        Command::Gridsearch(a) => gridsearch(a),
        Command::Synth(a) => synth(a),
        Command::Report(a) => report(a),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
