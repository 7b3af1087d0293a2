mod commands;
mod failure;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "customgnn", version, about = "Graph classification with per-graph adapted GNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct RunArgs {
    /// TOML run manifest.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Master seed; overrides the manifest.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub repeats: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated train/test runs; writes report.json, report.csv and a checkpoint.
    Train(RunArgs),
    /// Cross-band accuracy matrix for a size_bands plan.
    Bands(RunArgs),
    /// Base against customized model on the size-ordered split.
    Adaptability(RunArgs),
    /// Base, full, scale-only and shift-only adaptation.
    Ablation(RunArgs),
    /// Adapted first-block weights per graph as CSV.
    ExportParams {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Adaptation against filtering multiply-adds for one graph size.
    Flops {
        #[arg(long, short)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        nodes: usize,
        #[arg(long, default_value_t = 2000)]
        edges: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => commands::train(&args),
        Command::Bands(args) => commands::bands(&args),
        Command::Adaptability(args) => commands::adaptability(&args),
        Command::Ablation(args) => commands::ablation(&args),
        Command::ExportParams { run, checkpoint } => commands::export_params(&run, &checkpoint),
        Command::Flops { config, nodes, edges } => commands::flops(config.as_deref(), nodes, edges),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            f.exit_code()
        }
    }
}
