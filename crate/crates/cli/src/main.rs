//! `probegrid`: validate inputs, run probe grids, render reports and
//! generate synthetic scenarios.
//!
//! Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "probegrid", version, about = "Cross-task linear probe grids over CNN embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check that a manifest, labels and predictions are coherent.
    Validate(InputArgs),
    /// Fit and score every probe in the grid.
    Run(RunArgs),
    /// Build aggregate tables and SVG figures from results.csv.
    Report(ReportArgs),
    /// Write a synthetic scenario in the ingest formats.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Directory holding manifest.json, labels.csv, variables.json and
    /// predictions.csv; explicit paths below take precedence.
    #[arg(long, value_name = "DIR")]
    data_dir: Option<PathBuf>,
    /// Embedding container manifest.
    #[arg(long, value_name = "FILE")]
    manifest: Option<PathBuf>,
    /// Labels CSV (image_id,patient_id,<variables>).
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,
    /// Variable kinds JSON.
    #[arg(long, value_name = "FILE")]
    variables: Option<PathBuf>,
    /// Source-model predictions CSV.
    #[arg(long, value_name = "FILE")]
    predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    inputs: InputArgs,
    /// Output directory for results.csv and provenance.json.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Grid configuration JSON; flags override its fields.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads (default: available cores). Does not change output.
    #[arg(long, env = "PROBEGRID_WORKERS", value_name = "N")]
    workers: Option<usize>,
    /// Skip cells already committed to results.csv.partial.
    #[arg(long)]
    resume: bool,
    /// Refit each target over exactly its labelled train rows.
    #[arg(long)]
    exact_masks: bool,
    /// Fraction of patients held out for testing.
    #[arg(long, value_name = "F")]
    test_fraction: Option<f64>,
    /// Seed of the patient split hash.
    #[arg(long, value_name = "SEED")]
    split_seed: Option<u64>,
    /// Seed of the uniform-noise baseline feature.
    #[arg(long, value_name = "SEED")]
    random_seed: Option<u64>,
    /// Comma-separated source tasks, or '*' for all.
    #[arg(long, value_name = "LIST")]
    sources: Option<String>,
    /// Comma-separated target variables, or '*' for all.
    #[arg(long, value_name = "LIST")]
    targets: Option<String>,
    /// Comma-separated layer ids, or '*' for all.
    #[arg(long, value_name = "LIST")]
    layers: Option<String>,
    /// Source recorded as the default heatmap anchor.
    #[arg(long, value_name = "SOURCE")]
    anchor_source: Option<String>,
    /// First ridge multiplier tried after an unregularized fit fails.
    #[arg(long, value_name = "X")]
    ridge_start: Option<f64>,
    /// Largest ridge multiplier tried.
    #[arg(long, value_name = "X")]
    ridge_stop: Option<f64>,
    /// Growth factor between ridge multipliers.
    #[arg(long, value_name = "X")]
    ridge_factor: Option<f64>,
    /// Stop after committing this many cells, leaving a partial file.
    #[arg(long, value_name = "N")]
    max_cells: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportKind {
    LayerCurves,
    BestLayerHist,
    Bands,
    Heatmap,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// results.csv written by `run`.
    #[arg(long, value_name = "FILE")]
    results: PathBuf,
    /// Aggregate to build.
    #[arg(long, value_enum)]
    kind: ReportKind,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Heatmap layer (default: the last layer).
    #[arg(long, value_name = "ID")]
    layer: Option<u32>,
    /// Source whose scores order the heatmap rows.
    #[arg(long, value_name = "SOURCE")]
    anchor_source: Option<String>,
    /// Target for bands; filters layer curves.
    #[arg(long, value_name = "NAME")]
    target: Option<String>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "scenario_source")]
struct ScenarioChoice {
    /// Built-in scenario: demo, mid-layer, height or null.
    #[arg(long, value_name = "NAME")]
    preset: Option<String>,
    /// Scenario JSON file.
    #[arg(long, value_name = "FILE")]
    scenario: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    choice: ScenarioChoice,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

/// A command failure and the exit code it maps to.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Validate(args) => commands::validate(&args),
        Command::Run(args) => commands::run(&args),
        Command::Report(args) => commands::report(&args),
        Command::Synth(args) => commands::synth(&args),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
