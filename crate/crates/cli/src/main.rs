//! `sevade`: run the sarcasm analysis pipeline over a dataset, train the
//! baseline adjudicator, and score or inspect the artifacts of a run.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use sevade_core::adjudicator::TrainerHyper;

use crate::commands::TrainArgs;
use crate::config::RunArgs;

#[derive(Debug, Parser)]
#[command(name = "sevade", version, about = "Multi-agent sarcasm analysis with a decoupled adjudicator")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug, -vvv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Process a dataset and write predictions, transcripts and metrics.
    Run(RunArgs),
    /// Train the baseline adjudicator on canonical chains.
    TrainRa {
        /// JSON Lines of {"chain_text", "label"}.
        #[arg(long)]
        rationales: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = TrainerHyper::default().epochs)]
        epochs: u32,
        #[arg(long, default_value_t = TrainerHyper::default().learning_rate)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feature hash buckets.
        #[arg(long)]
        buckets: Option<u32>,
    },
    /// Score a predictions file against a labelled dataset.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-role activation and intensity statistics from a transcripts file.
    Dynamics {
        #[arg(long)]
        transcripts: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Split sizes, class balance and text length, optionally checked
    /// against a known benchmark's shape.
    Stats {
        #[arg(required = true)]
        datasets: Vec<PathBuf>,
        #[arg(long)]
        benchmark: Option<String>,
    },
    /// Probe a remote adjudicator service for protocol conformance.
    Conformance {
        #[arg(long)]
        url: String,
        #[arg(long, default_value_t = 10)]
        timeout_secs: u64,
    },
    /// Write a synthetic, linearly separable rationale corpus.
    GenCorpus {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Run(args) => commands::run(args),
        Command::TrainRa {
            rationales,
            out,
            epochs,
            lr,
            seed,
            buckets,
        } => commands::train_ra(&TrainArgs {
            rationales: rationales.clone(),
            out: out.clone(),
            hyper: TrainerHyper {
                learning_rate: *lr,
                epochs: *epochs,
                seed: *seed,
            },
            buckets: *buckets,
        }),
        Command::Score { predictions, dataset, out } => commands::score(predictions, dataset, out.as_deref()),
        Command::Dynamics { transcripts, dataset, out } => commands::dynamics(transcripts, dataset, out.as_deref()),
        Command::Stats { datasets, benchmark } => commands::stats(datasets, benchmark.as_deref()),
        Command::Conformance { url, timeout_secs } => commands::conformance(url, Duration::from_secs(*timeout_secs)),
        Command::GenCorpus { n, seed, out } => commands::gen_corpus(*n, *seed, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
