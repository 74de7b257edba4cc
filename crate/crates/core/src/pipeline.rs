//! Dataset-level runs: ablations, the bounded worker pool, optional base-model
//! classification in place of the adjudicator, and artifact writing.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::adjudicator::{build_adjudicator, Adjudicator, AdjudicatorConfig, AdjudicatorError, RationaleInput};
use crate::agents::{AgentPool, PromptSet, TemplateError};
use crate::backend::parse::first_json_object;
use crate::backend::{build_backend, BackendConfig, BackendError, CallContext, ChatBackend, ParseError, Stage};
use crate::dataset::{load_csv, load_jsonl, DatasetError, DatasetSplit, RationaleRecord};
use crate::engine::{Engine, EngineConfig, EngineError};
use crate::metrics::{agent_dynamics, score_predictions, InstanceFailureRecord, MetricsReport};
use crate::support::{build_search, SearchError, SearchProvider, SearchProviderConfig};
use crate::types::{AgentRole, DatasetInstance, EngineTranscript, Prediction, ReasoningChain};

pub const DEFAULT_CONCURRENCY: usize = 4;
/// Runs with a larger share of failed instances exit unsuccessfully.
pub const MAX_FAILURE_FRACTION: f64 = 0.10;

pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const RATIONALES_FILE: &str = "rationales.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Ablation {
    NoEvolving,
    NoRa,
    NoWebsearch,
    NoRole(AgentRole),
}

#[derive(Debug, Error)]
#[error("unknown ablation {0:?}; expected no-evolving, no-ra, no-websearch or no-<role>")]
pub struct UnknownAblation(pub String);

impl FromStr for Ablation {
    type Err = UnknownAblation;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        Ok(match norm.as_str() {
            "no-evolving" => Ablation::NoEvolving,
            "no-ra" => Ablation::NoRa,
            "no-websearch" | "no-web-search" => Ablation::NoWebsearch,
            other => match other.strip_prefix("no-").and_then(AgentRole::from_id) {
                Some(role) => Ablation::NoRole(role),
                None => return Err(UnknownAblation(s.to_string())),
            },
        })
    }
}

impl TryFrom<String> for Ablation {
    type Error = UnknownAblation;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Ablation> for String {
    fn from(a: Ablation) -> String {
        a.to_string()
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ablation::NoEvolving => f.write_str("no-evolving"),
            Ablation::NoRa => f.write_str("no-ra"),
            Ablation::NoWebsearch => f.write_str("no-websearch"),
            Ablation::NoRole(r) => write!(f, "no-{}", r.id().to_ascii_lowercase()),
        }
    }
}

/// Applies ablations to an engine configuration. `no-ra` does not touch the
/// engine.
pub fn apply_ablations(engine: &EngineConfig, ablations: &BTreeSet<Ablation>) -> EngineConfig {
    let mut out = engine.clone();
    for a in ablations {
        match a {
            Ablation::NoEvolving => out.enable_evolving = false,
            Ablation::NoWebsearch => out.enable_web_search = false,
            Ablation::NoRole(role) => {
                out.disabled_roles.insert(*role);
            }
            Ablation::NoRa => {}
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    /// Name written into the metrics report; defaults to the file stem.
    pub dataset_name: Option<String>,
    /// CSV column names; ignored for JSON Lines input.
    pub text_column: String,
    pub label_column: String,
    pub id_column: Option<String>,
    pub backend: BackendConfig,
    pub engine: EngineConfig,
    pub search: SearchProviderConfig,
    /// Required unless the `no-ra` ablation is active.
    pub adjudicator: Option<AdjudicatorConfig>,
    pub prompts_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub max_concurrency: usize,
    pub seed: u64,
    pub ablations: BTreeSet<Ablation>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::new(),
            dataset_name: None,
            text_column: "text".into(),
            label_column: "label".into(),
            id_column: None,
            backend: BackendConfig::default(),
            engine: EngineConfig::default(),
            search: SearchProviderConfig::default(),
            adjudicator: None,
            prompts_dir: None,
            output_dir: PathBuf::from("out"),
            max_concurrency: DEFAULT_CONCURRENCY,
            seed: 0,
            ablations: BTreeSet::new(),
        }
    }
}

impl RunConfig {
    pub fn no_ra(&self) -> bool {
        self.ablations.contains(&Ablation::NoRa)
    }

    pub fn effective_engine(&self) -> EngineConfig {
        apply_ablations(&self.engine, &self.ablations)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.dataset.as_os_str().is_empty() {
            return Err(PipelineError::Config("dataset path is required".into()));
        }
        if self.max_concurrency == 0 {
            return Err(PipelineError::Config("max_concurrency must be at least 1".into()));
        }
        if !self.no_ra() && self.adjudicator.is_none() {
            return Err(PipelineError::Config(
                "an adjudicator is required unless the no-ra ablation is active".into(),
            ));
        }
        self.backend.validate()?;
        self.effective_engine().validate()?;
        Ok(())
    }

    pub fn dataset_label(&self) -> String {
        self.dataset_name.clone().unwrap_or_else(|| {
            self.dataset.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
        })
    }

    pub fn load_dataset(&self) -> Result<DatasetSplit, DatasetError> {
        let is_csv = self.dataset.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            load_csv(&self.dataset, &self.text_column, &self.label_column, self.id_column.as_deref())
        } else {
            load_jsonl(&self.dataset)
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Adjudicator(#[from] AdjudicatorError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Templates(#[from] TemplateError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub const CLASSIFY_SYSTEM: &str = "You are a sarcasm classifier. Read the reasoning chain produced by \
an analysis team and decide whether the text it analyses is sarcastic. Respond with exactly one JSON \
object and nothing else.";

pub const CLASSIFY_SCHEMA: &str = r#"{"label": 0 or 1}"#;

/// The classification prompt sees only the canonical chain.
pub fn classify_prompt(chain: &ReasoningChain) -> String {
    format!(
        "Reasoning chain:\n{}\nIs the analysed text sarcastic? Answer 1 for sarcastic, 0 for not sarcastic.\n\
         Respond with JSON matching: {CLASSIFY_SCHEMA}",
        chain.canonical_text()
    )
}

pub fn parse_classification(raw: &str) -> Result<u8, ParseError> {
    let obj = first_json_object(raw).ok_or(ParseError::NoObject)?;
    match obj.get("label") {
        None => Err(ParseError::MissingField("label")),
        Some(Value::Number(n)) if n.as_u64() == Some(0) => Ok(0),
        Some(Value::Number(n)) if n.as_u64() == Some(1) => Ok(1),
        Some(other) => Err(ParseError::InvalidField {
            field: "label",
            reason: format!("expected 0 or 1, got {other}"),
        }),
    }
}

/// How a chain becomes a prediction.
#[derive(Clone, Copy)]
pub enum Decider<'a> {
    Adjudicator(&'a dyn Adjudicator),
    /// The chat backend labels the chain itself.
    BaseModel,
}

pub struct Components<'a> {
    pub engine: &'a Engine,
    pub backend: &'a dyn ChatBackend,
    pub search: &'a dyn SearchProvider,
    pub decider: Decider<'a>,
}

#[derive(Debug, Clone)]
pub enum InstanceOutcome {
    Scored { prediction: Prediction, transcript: EngineTranscript },
    Failed { id: String, error: String, transcript: EngineTranscript },
}

impl InstanceOutcome {
    pub fn transcript(&self) -> &EngineTranscript {
        match self {
            InstanceOutcome::Scored { transcript, .. } | InstanceOutcome::Failed { transcript, .. } => transcript,
        }
    }

    pub fn prediction(&self) -> Option<&Prediction> {
        match self {
            InstanceOutcome::Scored { prediction, .. } => Some(prediction),
            InstanceOutcome::Failed { .. } => None,
        }
    }
}

fn failed(mut transcript: EngineTranscript, error: String) -> InstanceOutcome {
    log::warn!("instance {} failed: {error}", transcript.instance_id);
    transcript.failure = Some(error.clone());
    InstanceOutcome::Failed {
        id: transcript.instance_id.clone(),
        error,
        transcript,
    }
}

pub fn process_instance(c: &Components<'_>, instance: &DatasetInstance) -> InstanceOutcome {
    let run = match c.engine.run_instance(c.backend, c.search, instance) {
        Ok(run) => run,
        Err(f) => return failed(f.transcript, f.error.to_string()),
    };
    let mut transcript = run.transcript;
    let chain = run.chain;
    let probability = match c.decider {
        Decider::Adjudicator(adj) => match adj.adjudicate(RationaleInput::from_chain(&chain)) {
            Ok(v) => v.probability,
            Err(e) => return failed(transcript, e.to_string()),
        },
        Decider::BaseModel => {
            let mut ctx = CallContext::new(c.backend, instance.id.clone());
            let res = ctx.structured(
                Stage::Classify,
                None,
                0,
                CLASSIFY_SYSTEM,
                &classify_prompt(&chain),
                CLASSIFY_SCHEMA,
                parse_classification,
            );
            transcript.backend_calls.extend(ctx.take_calls());
            match res {
                Ok(s) => match s.value {
                    Ok(label) => f64::from(label),
                    Err(e) => return failed(transcript, format!("classification unusable after repairs: {e}")),
                },
                Err(e) => return failed(transcript, e.to_string()),
            }
        }
    };
    InstanceOutcome::Scored {
        prediction: Prediction::new(instance.id.clone(), probability, chain),
        transcript,
    }
}

/// Processes instances on at most `concurrency` threads; the result order
/// matches the input order regardless of scheduling.
pub fn run_instances(c: &Components<'_>, instances: &[DatasetInstance], concurrency: usize) -> Vec<InstanceOutcome> {
    let workers = concurrency.clamp(1, instances.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<InstanceOutcome>>> = Mutex::new(vec![None; instances.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(instance) = instances.get(k) else { break };
                let outcome = process_instance(c, instance);
                slots.lock().expect("result slots")[k] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots")
        .into_iter()
        .map(|o| o.expect("every instance processed"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: MetricsReport,
    pub scored: usize,
    pub failed: usize,
    pub network_operations: u64,
    pub output_dir: PathBuf,
}

impl RunOutcome {
    pub fn failure_budget_exceeded(&self) -> bool {
        let total = self.scored + self.failed;
        total > 0 && self.failed as f64 > MAX_FAILURE_FRACTION * total as f64
    }
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), PipelineError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut out, &item).map_err(|e| io_err(path)(e.into()))?;
        out.write_all(b"\n").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Writes predictions, transcripts, rationales and the metrics report.
pub fn write_artifacts(
    dir: &Path,
    dataset: &str,
    split: &DatasetSplit,
    outcomes: &[InstanceOutcome],
    seed: u64,
) -> Result<MetricsReport, PipelineError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let predictions: Vec<&Prediction> = outcomes.iter().filter_map(InstanceOutcome::prediction).collect();
    let labels: HashMap<String, u8> = split.instances.iter().map(|i| (i.id.clone(), i.label)).collect();

    write_lines(&dir.join(PREDICTIONS_FILE), &predictions)?;
    write_lines(&dir.join(TRANSCRIPTS_FILE), outcomes.iter().map(InstanceOutcome::transcript))?;
    write_lines(
        &dir.join(RATIONALES_FILE),
        predictions.iter().map(|p| RationaleRecord {
            chain_text: p.chain.canonical_text().to_string(),
            label: labels[&p.instance_id],
        }),
    )?;

    let owned: Vec<Prediction> = predictions.iter().map(|p| (*p).clone()).collect();
    let confusion = score_predictions(&owned, &labels).map_err(|e| PipelineError::Config(e.to_string()))?;
    let mut report = MetricsReport::from_confusion(dataset, confusion);
    let transcripts: Vec<EngineTranscript> = outcomes.iter().map(|o| o.transcript().clone()).collect();
    report.dynamics = agent_dynamics(&transcripts, &labels).ok();
    report.failures = outcomes
        .iter()
        .filter_map(|o| match o {
            InstanceOutcome::Failed { id, error, .. } => Some(InstanceFailureRecord {
                id: id.clone(),
                error: error.clone(),
            }),
            InstanceOutcome::Scored { .. } => None,
        })
        .collect();
    report.seed = Some(seed);

    let path = dir.join(METRICS_FILE);
    let mut body = serde_json::to_string_pretty(&report).map_err(|e| io_err(&path)(e.into()))?;
    body.push('\n');
    fs::write(&path, body).map_err(io_err(&path))?;
    Ok(report)
}

/// Loads everything named by `config`, processes the dataset and writes the
/// artifacts.
pub fn run_pipeline(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let split = config.load_dataset()?;
    let prompts = match &config.prompts_dir {
        Some(dir) => PromptSet::load_dir(dir)?,
        None => PromptSet::default(),
    };
    let engine = Engine::new(config.effective_engine(), AgentPool::new(prompts))?;
    let backend = build_backend(&config.backend)?;
    let search = build_search(&config.search)?;
    let adjudicator = match (&config.adjudicator, config.no_ra()) {
        (_, true) => None,
        (Some(a), false) => Some(build_adjudicator(a)?),
        (None, false) => unreachable!("validated above"),
    };
    let decider = match &adjudicator {
        Some(a) => Decider::Adjudicator(a.as_ref()),
        None => Decider::BaseModel,
    };
    let components = Components {
        engine: &engine,
        backend: backend.as_ref(),
        search: search.as_ref(),
        decider,
    };
    log::info!(
        "processing {} instances from {} with {} workers",
        split.len(),
        config.dataset.display(),
        config.max_concurrency
    );
    let outcomes = run_instances(&components, &split.instances, config.max_concurrency);
    let report = write_artifacts(&config.output_dir, &config.dataset_label(), &split, &outcomes, config.seed)?;
    let failed = report.failures.len();
    let network_operations = backend.network_operations()
        + search.network_operations()
        + adjudicator.as_ref().map_or(0, |a| a.network_operations());
    Ok(RunOutcome {
        report,
        scored: outcomes.len() - failed,
        failed,
        network_operations,
        output_dir: config.output_dir.clone(),
    })
}
