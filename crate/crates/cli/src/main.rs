//! `trinity` CLI: generate the synthetic world, pretrain the motion
//! codebook, train the alignment model, score videos, evaluate AUCs,
//! run the ablation grid, and render plots.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "trinity", version, about = "Context-aware video anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every pipeline command.
#[derive(Args, Clone)]
struct CommonArgs {
    /// Run configuration file (versioned key-value text).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override (recorded in every artifact).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Alignment mode: contextual | context_free.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic context-scheduled dataset.
    Generate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Pretrain the motion vector-quantization codebook.
    PretrainVq {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset directory (from `generate`).
        #[arg(long)]
        data: PathBuf,
        /// Use stored ground-truth flow instead of the TV-L1 solver.
        #[arg(long)]
        use_gt_flow: Option<bool>,
    },
    /// Train the alignment model.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        /// Codebook file (from `pretrain-vq`).
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        use_gt_flow: Option<bool>,
    },
    /// Score a dataset split with a trained model.
    Score {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        /// Model directory (from `train`).
        #[arg(long)]
        model: PathBuf,
        /// Split to score: pseudo | context_free | train.
        #[arg(long, default_value = "pseudo")]
        split: String,
        /// Fusion weight override.
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        use_gt_flow: Option<bool>,
        /// Also dump the patch-alignment matrix of each video's first
        /// window as CSV.
        #[arg(long, default_value_t = false)]
        dump_align: bool,
    },
    /// Evaluate AUC for the model's mode (pseudo-context protocol or
    /// context-free frame AUC).
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        use_gt_flow: Option<bool>,
    },
    /// Train and evaluate the alignment-scheme ablation grid.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        use_gt_flow: Option<bool>,
    },
    /// Render SVG plots from score/ROC CSVs.
    Plot {
        /// Score CSV (from `score`) to plot as a timeline.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// ROC CSV (from `evaluate`) to plot as a curve.
        #[arg(long)]
        roc: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { common } => commands::generate(common),
        Command::PretrainVq {
            common,
            data,
            use_gt_flow,
        } => commands::pretrain_vq(common, data, use_gt_flow),
        Command::Train {
            common,
            data,
            codebook,
            epochs,
            use_gt_flow,
        } => commands::train(common, data, codebook, epochs, use_gt_flow),
        Command::Score {
            common,
            data,
            model,
            split,
            alpha,
            use_gt_flow,
            dump_align,
        } => commands::score(common, data, model, split, alpha, use_gt_flow, dump_align),
        Command::Evaluate {
            common,
            data,
            model,
            alpha,
            use_gt_flow,
        } => commands::evaluate(common, data, model, alpha, use_gt_flow),
        Command::Ablate {
            common,
            data,
            codebook,
            epochs,
            alpha,
            use_gt_flow,
        } => commands::ablate(common, data, codebook, epochs, alpha, use_gt_flow),
        Command::Plot { scores, roc, out } => commands::plot(scores, roc, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

pub(crate) use CommonArgs as Common;
