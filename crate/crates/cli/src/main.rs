//! `levelfm`: generate synthetic telemetry, train and evaluate difficulty
//! predictors, and interpret fitted factorization machines.

mod commands;
mod config;
mod error;
mod manifest;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use levelfm_core::eval::Method;

use crate::error::EXIT_USAGE;

#[derive(Debug, Parser)]
#[command(
    name = "levelfm",
    version,
    about = "Per-player level difficulty prediction"
)]
struct Cli {
    /// JSON settings for the chosen command. Explicit flags take precedence.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,

    /// Parent of the default output directory of each command.
    #[arg(
        long,
        global = true,
        env = "LEVELFM_OUTPUT_ROOT",
        default_value = "levelfm-out"
    )]
    output_root: PathBuf,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset with known ground truth.
    Generate(GenerateArgs),
    /// Fit one method on one split and predict the held-out levels.
    Train(TrainArgs),
    /// Sweep methods over observed-level checkpoints and seeds.
    Evaluate(EvaluateArgs),
    /// Export factor tables, histograms and correlations of a trained model.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Naive,
    Rf,
    Fm,
    FmFeat,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Naive => Method::Naive,
            MethodArg::Rf => Method::Rf,
            MethodArg::Fm => Method::Fm,
            MethodArg::FmFeat => Method::FmFeat,
        }
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub players: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub levels: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Latent factor count (factorization machines only).
    #[arg(long)]
    pub factors: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Standard deviation of the initial factors; 1.0 for fm, 0.1 for fm-feat.
    #[arg(long)]
    pub init_stdev: Option<f64>,
    /// Separate hyperprior groups for the player, level and feature blocks.
    #[arg(long)]
    pub block_groups: bool,
    /// Trees in the random forest.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Levels of the held-out players visible during training.
    #[arg(long)]
    pub observed: Option<u32>,
    /// Held-out players are scored on levels above this one.
    #[arg(long)]
    pub floor: Option<u32>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub min_history: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// interactions.csv, or a directory containing it.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory with levels.csv and optionally telemetry.csv.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Option<Vec<u32>>,
    #[arg(long)]
    pub floor: Option<u32>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub methods: Option<Vec<MethodArg>>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub factors: Option<Vec<usize>>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub min_history: Option<u32>,
    /// Rolling window of the per-level error curves.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Also write plot.py, a matplotlib recipe for the sweep CSVs.
    #[arg(long)]
    pub plot_script: bool,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Output directory of `train`, or the model.json inside it.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// truth.csv from `generate`; adds ground-truth correlations.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub plot_script: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE as u8 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let ctx = commands::Context {
        config: cli.config,
        output_root: cli.output_root,
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Analyze(a) => commands::analyze(&ctx, a),
    };
    match result {
        Ok(out) => {
            println!("{}", out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
