mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::{NetFlags, TrainFlags};

#[derive(Parser)]
#[command(name = "rshaze", version, about = "Train, run and inspect the dehazing network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on a paired directory or a synthetic set.
    Train(TrainArgs),
    /// Dehaze images with a trained checkpoint.
    Infer(InferArgs),
    /// Score a checkpoint on a paired dataset.
    Eval(EvalArgs),
    /// Per-layer parameter and FLOP report.
    Describe(DescribeArgs),
    /// Finite-difference check of every differentiable op and block.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic paired dataset to disk.
    Synth(SynthArgs),
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct DataSource {
    /// Directory with `hazy/` and `clean/` subdirectories.
    #[arg(long, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Generate N synthetic pairs instead of reading a directory.
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
}

#[derive(Args)]
struct SynthOptions {
    /// Side length of synthetic images; the training patch size, or 64.
    #[arg(long)]
    size: Option<usize>,
    /// Haze preset for synthetic pairs: thin, moderate or thick; mixed if unset.
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    source: DataSource,
    #[command(flatten)]
    synth: SynthOptions,
    /// `key = value` file with network and training settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    net: NetFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Train/val/test weights.
    #[arg(long, default_value = "320,35,45")]
    split: String,
    /// Output directory for checkpoints, the log and the resolved config.
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Image files or directories of images.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    source: DataSource,
    #[command(flatten)]
    synth: SynthOptions,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DescribeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    net: NetFlags,
    /// Input size as HxW or a single side.
    #[arg(long, default_value = "256x256")]
    input: String,
    /// Also print the ablation ladder at these channels and depths.
    #[arg(long)]
    ladder: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Comma-separated seeds.
    #[arg(long, default_value = "1,2,3,4,5")]
    seeds: String,
    #[arg(long, default_value_t = rshaze::verify::DEFAULT_TOLERANCE)]
    tolerance: f64,
    /// Only run cases whose name contains this text.
    #[arg(long)]
    only: Option<String>,
    /// Skip the full tiny network, the slowest case.
    #[arg(long)]
    skip_network: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    count: usize,
    #[command(flatten)]
    synth: SynthOptions,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Infer(a) => commands::infer(a),
        Command::Eval(a) => commands::eval(a),
        Command::Describe(a) => commands::describe(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synth(a) => commands::synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
