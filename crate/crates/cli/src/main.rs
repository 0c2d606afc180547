//! `rocp` command-line interface.
//!
//! All randomness derives from `--seed`, which defaults to 0.

mod commands;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rocp_core::conformal::CpMethod;
use rocp_core::eval::TrainingMode;
use rocp_core::models::{Arch, ModelConfig};
use rocp_core::rocp::{SizeLossKind, SmoothingConfig};
use rocp_core::tensor::AdamConfig;

#[derive(Parser)]
#[command(name = "rocp", version, about = "Conformal-aware GNN training and split conformal evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stochastic-block-model dataset directory.
    Synth(SynthArgs),
    /// Train one model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint over repeated calibration/test splits.
    Eval(EvalArgs),
    /// Train and evaluate a full grid of models, modes and seeds.
    Experiment(ExperimentArgs),
    /// Sweep calib_frac and lambda.
    Ablate(AblateArgs),
    /// Aggregate results CSVs into a comparison table.
    Report(ReportArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 400)]
    pub nodes: usize,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 0.05)]
    pub p_in: f64,
    #[arg(long, default_value_t = 0.002)]
    pub p_out: f64,
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    /// Norm of the class-mean feature vectors.
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum SizeLossArg {
    Linear,
    Clamped,
}

#[derive(Args, Clone)]
pub struct ModelArgs {
    /// Hidden width (per head for GAT); architecture default when omitted.
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
}

impl ModelArgs {
    pub fn config_for(&self, arch: Arch) -> ModelConfig {
        let base = ModelConfig::default_for(arch);
        ModelConfig {
            hidden_dim: self.hidden.unwrap_or(base.hidden_dim),
            num_layers: self.layers,
            dropout: self.dropout,
            ..base
        }
    }
}

#[derive(Args, Clone)]
pub struct SmoothingArgs {
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Size-loss weight.
    #[arg(long, default_value_t = 0.001)]
    pub lambda: f64,
    /// Fraction of validation nodes calibrating the in-training threshold; 0 trains plain cross-entropy.
    #[arg(long, default_value_t = 0.5)]
    pub calib_frac: f64,
    #[arg(long, default_value_t = 0.1)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.1)]
    pub dispersion: f64,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, value_enum, default_value_t = SizeLossArg::Linear)]
    pub size_loss: SizeLossArg,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
}

impl SmoothingArgs {
    pub fn config(&self, epsilon: f64) -> SmoothingConfig {
        SmoothingConfig {
            temperature: self.temperature,
            dispersion: self.dispersion,
            tau: self.tau,
            lambda: self.lambda,
            calib_frac: self.calib_frac,
            epsilon,
            epochs: self.epochs,
            size_loss: match self.size_loss {
                SizeLossArg::Linear => SizeLossKind::Linear,
                SizeLossArg::Clamped => SizeLossKind::Clamped,
            },
            optimizer: AdamConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Args, Clone)]
pub struct SplitArgs {
    /// Training nodes per class when the dataset has no splits.json.
    #[arg(long, default_value_t = 20)]
    pub per_class_train: usize,
    /// Validation nodes when the dataset has no splits.json.
    #[arg(long, default_value_t = 500)]
    pub valid_size: usize,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value = "gcn", value_parser = parse_arch)]
    pub model: Arch,
    #[command(flatten)]
    pub model_args: ModelArgs,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    /// Target miscoverage used by the in-training threshold.
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[command(flatten)]
    pub splits: SplitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "aps", value_parser = parse_cp)]
    pub cp_method: Vec<CpMethod>,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub epsilon: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub splits: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Results CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct ExperimentArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub dataset: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "gcn", value_parser = parse_arch)]
    pub models: Vec<Arch>,
    #[arg(long, value_delimiter = ',', default_value = "ce,rocp", value_parser = parse_mode)]
    pub modes: Vec<TrainingMode>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1")]
    pub epsilon: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "aps", value_parser = parse_cp)]
    pub cp_method: Vec<CpMethod>,
    #[arg(long, default_value_t = 10)]
    pub model_seeds: usize,
    #[arg(long, default_value_t = 100)]
    pub splits: usize,
    #[command(flatten)]
    pub split_sizes: SplitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "gcn", value_parser = parse_arch)]
    pub models: Vec<Arch>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.3,0.4,0.5,0.6")]
    pub calib_fracs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0.001")]
    pub lambdas: Vec<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training settings; --lambda and --calib-frac are replaced by the sweep grids.
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value = "aps", value_parser = parse_cp)]
    pub cp_method: CpMethod,
    #[arg(long, default_value_t = 1)]
    pub model_seeds: usize,
    #[arg(long, default_value_t = 100)]
    pub splits: usize,
    #[command(flatten)]
    pub split_sizes: SplitArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Sweep CSV path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write accuracy.svg and ineff.svg next to the sweep CSV.
    #[arg(long)]
    pub emit_svg: bool,
}

#[derive(Args)]
pub struct ReportArgs {
    /// Results CSVs to aggregate.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Aggregate CSV path.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the text table here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    s.parse().map_err(|e: rocp_core::RocpError| e.to_string())
}

fn parse_cp(s: &str) -> Result<CpMethod, String> {
    s.parse().map_err(|e: rocp_core::RocpError| e.to_string())
}

fn parse_mode(s: &str) -> Result<TrainingMode, String> {
    s.parse().map_err(|e: rocp_core::RocpError| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Experiment(a) => commands::experiment(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Report(a) => commands::report(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
