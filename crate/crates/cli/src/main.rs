//! `vle`: generate synthetic data, train base models, blend, average and
//! score prediction files.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vle_core::ensemble::StackerKind;
use vle_core::{FeatureMode, ModelKind, DEFAULT_TOP_K};

#[derive(Parser, Debug)]
#[command(name = "vle", version, about = "Multi-label video classification and ensembling")]
struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset split 7:2:1 into train/validate/test.
    GenData(GenDataArgs),
    /// Train a base model on one or more dataset files.
    Train(TrainArgs),
    /// Write top-k predictions of a trained model.
    Predict(PredictArgs),
    /// Fit a stacker on holdout predictions and apply it to test predictions.
    Blend(BlendArgs),
    /// Weighted average of prediction files.
    Average(AverageArgs),
    /// Print the GAP of a prediction file.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// TOML generator spec; defaults apply to missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long, value_parser = parse::<ModelKind>)]
    pub model: ModelKind,
    #[arg(long, value_parser = parse::<FeatureMode>)]
    pub features: Option<FeatureMode>,
    /// Training files; several files are concatenated (e.g. train + validate).
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML model config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Label vocabulary size; read from the dataset header when omitted.
    #[arg(long)]
    pub vocab_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
}

#[derive(Args, Debug)]
pub struct BlendArgs {
    /// Base-model predictions on the holdout set. File stems name the bases.
    #[arg(long, num_args = 1.., required = true)]
    pub bases: Vec<PathBuf>,
    /// Holdout dataset supplying the labels.
    #[arg(long)]
    pub holdout_data: PathBuf,
    /// Base-model predictions on the test set, in the same order as `--bases`.
    #[arg(long, num_args = 1.., required = true)]
    pub test_bases: Vec<PathBuf>,
    #[arg(long, value_parser = parse::<StackerKind>)]
    pub stacker: StackerKind,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML training config for the stacker.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub top_k: usize,
    #[arg(long)]
    pub vocab_size: Option<usize>,
    /// Also save the fitted stacker.
    #[arg(long)]
    pub save_stacker: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AverageArgs {
    /// Strategy file, or a shipped strategy name (A to E).
    #[arg(long)]
    pub config: String,
    /// Directory holding member files of a shipped strategy.
    #[arg(long, default_value = ".")]
    pub members: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub predictions: PathBuf,
    /// Dataset holding the true labels.
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    pub k: usize,
}

fn parse<T: std::str::FromStr<Err = vle_core::Error>>(s: &str) -> Result<T, String> {
    s.parse().map_err(|e: vle_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Blend(a) => commands::blend(a),
        Command::Average(a) => commands::average(a),
        Command::Evaluate(a) => commands::evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
