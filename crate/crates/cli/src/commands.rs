//! Subcommand implementations. Each returns the process exit code; hard
//! errors propagate as `anyhow` errors and exit with status 1.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use sevade_core::adjudicator::{conformance_suite, train_baseline, TrainerHyper, DEFAULT_BUCKETS};
use sevade_core::dataset::{benchmark, load_csv, load_jsonl, load_rationales, split_stats, write_rationales, SplitName};
use sevade_core::metrics::{agent_dynamics, score_predictions};
use sevade_core::pipeline::{run_pipeline, PipelineError};
use sevade_core::testkit::separable_corpus;
use sevade_core::{DatasetSplit, EngineTranscript, MetricsReport, Prediction};

use crate::config::RunArgs;

/// Exit status when more than the allowed fraction of instances failed.
pub const EXIT_FAILURE_BUDGET: u8 = 3;
/// Exit status for configuration errors.
pub const EXIT_CONFIG: u8 = 2;

pub fn run(args: &RunArgs) -> Result<ExitCode> {
    let config = match args.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
    };
    let outcome = match run_pipeline(&config) {
        Ok(o) => o,
        Err(e @ PipelineError::Config(_)) => {
            eprintln!("error: {e}");
            return Ok(ExitCode::from(EXIT_CONFIG));
        }
        Err(e) => return Err(e.into()),
    };
    let r = &outcome.report;
    println!("dataset {} : {} scored, {} failed", r.dataset, outcome.scored, outcome.failed);
    if let (Some(acc), Some(f1)) = (r.accuracy, r.macro_f1) {
        println!("accuracy {acc:.4}  macro-F1 {f1:.4}");
    }
    println!("network operations {}", outcome.network_operations);
    println!("artifacts written to {}", outcome.output_dir.display());
    if outcome.failure_budget_exceeded() {
        eprintln!("error: {} of {} instances failed", outcome.failed, outcome.scored + outcome.failed);
        return Ok(ExitCode::from(EXIT_FAILURE_BUDGET));
    }
    Ok(ExitCode::SUCCESS)
}

pub struct TrainArgs {
    pub rationales: PathBuf,
    pub out: PathBuf,
    pub hyper: TrainerHyper,
    pub buckets: Option<u32>,
}

pub fn train_ra(args: &TrainArgs) -> Result<ExitCode> {
    let records = load_rationales(&args.rationales)?;
    let data: Vec<(String, u8)> = records.into_iter().map(|r| (r.chain_text, r.label)).collect();
    let (model, report) = train_baseline(&data, &args.hyper, args.buckets.unwrap_or(DEFAULT_BUCKETS))?;
    model.save(&args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("examples {}", report.examples);
    println!("initial loss {:.6}", report.initial_loss);
    println!("final loss {:.6}", report.final_loss);
    println!("model sha256 {}", model.digest());
    Ok(ExitCode::SUCCESS)
}

/// JSON Lines or CSV (with `text`/`label`/`id` columns) by extension.
pub fn load_split(path: &Path) -> Result<DatasetSplit> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    Ok(if is_csv {
        load_csv(path, "text", "label", Some("id"))?
    } else {
        load_jsonl(path)?
    })
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).with_context(|| format!("{}:{}: schema error", path.display(), idx + 1))?;
        out.push(item);
    }
    Ok(out)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut body = serde_json::to_string_pretty(value)?;
    body.push('\n');
    match out {
        Some(path) => fs::write(path, body).with_context(|| format!("writing {}", path.display()))?,
        None => io::stdout().write_all(body.as_bytes())?,
    }
    Ok(())
}

fn label_map(split: &DatasetSplit) -> HashMap<String, u8> {
    split.instances.iter().map(|i| (i.id.clone(), i.label)).collect()
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn score(predictions: &Path, dataset: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let preds: Vec<Prediction> = read_jsonl(predictions)?;
    let split = load_split(dataset)?;
    let cm = score_predictions(&preds, &label_map(&split))?;
    let report = MetricsReport::from_confusion(stem(dataset), cm);
    emit(&report, out)?;
    Ok(ExitCode::SUCCESS)
}

pub fn dynamics(transcripts: &Path, dataset: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let ts: Vec<EngineTranscript> = read_jsonl(transcripts)?;
    let split = load_split(dataset)?;
    let d = agent_dynamics(&ts, &label_map(&split))?;
    emit(&d, out)?;
    Ok(ExitCode::SUCCESS)
}

pub fn stats(datasets: &[PathBuf], benchmark_name: Option<&str>) -> Result<ExitCode> {
    let shape = match benchmark_name {
        Some(name) => match benchmark(name) {
            Some(b) => Some(b),
            None => bail!("unknown benchmark {name:?}"),
        },
        None => None,
    };
    let mut mismatched = false;
    for path in datasets {
        let split = load_split(path)?;
        let s = split_stats(&split)?;
        let name = SplitName::infer(path);
        println!(
            "{} [{name:?}] count {} positives {} negatives {} mean tokens {:.2}",
            path.display(),
            s.count,
            s.positives,
            s.negatives,
            s.mean_tokens
        );
        if let Some(b) = shape {
            if let Some(expected) = b.expected(name) {
                if expected != s.count {
                    mismatched = true;
                    println!("  mismatch: {} {name:?} expects {expected} instances", b.name);
                }
            }
            if b.avg_len != s.mean_tokens_rounded() {
                println!("  note: {} averages {} tokens per text, this split {}", b.name, b.avg_len, s.mean_tokens_rounded());
            }
        }
    }
    Ok(if mismatched { ExitCode::FAILURE } else { ExitCode::SUCCESS })
}

pub fn conformance(url: &str, timeout: Duration) -> Result<ExitCode> {
    let checks = conformance_suite(url, timeout);
    let mut ok = true;
    for c in &checks {
        ok &= c.passed;
        println!("{} {} {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

pub fn gen_corpus(n: usize, seed: u64, out: &Path) -> Result<ExitCode> {
    if n < 2 {
        bail!("a corpus needs at least two chains");
    }
    let records = separable_corpus(n, seed);
    let mut w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
    write_rationales(&records, &mut w)?;
    w.flush()?;
    println!("wrote {n} chains to {}", out.display());
    Ok(ExitCode::SUCCESS)
}
