mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multiea::training::Strategy;
use multiea::Error;

use crate::config::Pool;

#[derive(Parser, Debug)]
#[command(name = "multiea", version, about = "Align entities across several knowledge graphs at once")]
struct Cli {
    /// Worker threads; 1 gives the reproducible path.
    #[arg(long, global = true, env = "MULTIEA_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Join pair-wise labels through a pivot graph and induce subgraphs.
    BuildDataset(BuildArgs),
    /// Write a planted instance: relabeled copies of one random graph.
    Synth(SynthArgs),
    /// Train a model and evaluate it on the held-out labels.
    Train(TrainArgs),
    /// Evaluate a trained run.
    Eval(EvalArgs),
    /// Write the encoder output of every graph as TSV.
    ExportEmbeddings(ExportArgs),
    /// Train and evaluate over a grid of one hyperparameter.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// `NAME=TRIPLES.tsv`; the first graph is the pivot.
    #[arg(long = "graph", required = true, value_parser = parse_named_path)]
    pub graphs: Vec<(String, PathBuf)>,
    /// `pivot_id<TAB>other_id` files, one per non-pivot graph in order.
    #[arg(long = "pairs", required = true)]
    pub pairs: Vec<PathBuf>,
    /// Neighbors of labelled entities are kept when their degree exceeds this.
    #[arg(long, default_value_t = 15)]
    pub degree_threshold: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 3)]
    pub graphs: usize,
    #[arg(long, default_value_t = 500)]
    pub entities: usize,
    #[arg(long, default_value_t = 10)]
    pub relations: usize,
    #[arg(long, default_value_t = 3000)]
    pub triples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default, Clone)]
pub struct TrainOverrides {
    #[arg(long)]
    pub strategy: Option<Strategy>,
    #[arg(long)]
    pub anchor_index: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub negative_groups: Option<usize>,
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long = "layers")]
    pub layer_count: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_ratio: Option<f64>,
    #[arg(long)]
    pub monitor_fraction: Option<f64>,
    /// Count each pair twice in the `each` distance.
    #[arg(long)]
    pub ordered_pairs: bool,
}

#[derive(Args, Debug, Default, Clone)]
pub struct EvalOverrides {
    #[arg(long, conflicts_with = "no_infer")]
    pub infer: bool,
    #[arg(long)]
    pub no_infer: bool,
    /// Weight of the first-order similarity.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Comma-separated K list.
    #[arg(long = "k", value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub pool: Option<Pool>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Run directory for the checkpoint, curve, splits and manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[command(flatten)]
    pub eval: EvalOverrides,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Defaults to `<run>/report.tsv`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for top-100 similarity dumps, one file per graph pair.
    #[arg(long)]
    pub dump_similarities: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalOverrides,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    Margin,
    NegativeGroups,
    Gamma,
    TrainRatio,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated grid; gamma defaults to 0, 0.2, …, 1.
    #[arg(long, value_delimiter = ',')]
    pub values: Option<Vec<f64>>,
    #[command(flatten)]
    pub train: TrainOverrides,
    #[command(flatten)]
    pub eval: EvalOverrides,
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=PATH, got {s:?}"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected NAME=PATH, got {s:?}"));
    }
    Ok((name.to_owned(), PathBuf::from(path)))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Divergence { .. } => 4,
        Error::Io(_)
        | Error::Parse { .. }
        | Error::Data(_)
        | Error::InconsistentLabels(_)
        | Error::Shape(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::BuildDataset(a) => commands::build_dataset(a),
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportEmbeddings(a) => commands::export_embeddings(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Config(list) => {
                    eprintln!("error: invalid configuration");
                    for p in list {
                        eprintln!("  - {p}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
