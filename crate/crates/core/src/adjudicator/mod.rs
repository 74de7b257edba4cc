//! Rationale adjudication: maps a reasoning chain, and nothing else, to a
//! sarcasm probability.
//!
//! The only way to build a [`RationaleInput`] is from a [`ReasoningChain`] or
//! from text that parses as a canonical chain, so an adjudicator cannot be
//! handed the raw instance text by accident.

mod baseline;
pub mod features;
mod remote;

use std::path::PathBuf;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{label_for, ReasoningChain, ValidationError};

pub use baseline::{sigmoid, train_baseline, BaselineModel, TrainReport, TrainerHyper, DEFAULT_BUCKETS, MODEL_MAGIC, MODEL_VERSION};
pub use remote::{conformance_suite, ConformanceCheck, RemoteAdjudicator};

/// Clamp applied to predictions before taking logs.
pub const BCE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AdjudicatorError {
    #[error("predictions ({predictions}) and labels ({labels}) differ in length or are empty")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("training data unusable: {0}")]
    DegenerateData(String),
    #[error("model file not found: {0}")]
    ModelMissing(String),
    #[error("model file malformed: {0}")]
    ModelFormat(String),
    #[error("remote adjudicator unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("remote adjudicator protocol violation: {0}")]
    Protocol(String),
    #[error("rationale is not a canonical chain: {0}")]
    NotCanonical(#[from] ValidationError),
}

/// Mean binary cross-entropy with predictions clamped to
/// `[BCE_EPSILON, 1 - BCE_EPSILON]`.
pub fn bce_loss(predictions: &[f64], labels: &[u8]) -> Result<f64, AdjudicatorError> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(AdjudicatorError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            let y = f64::from(y);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// The sole input type accepted by adjudicators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RationaleInput<'a>(&'a str);

impl<'a> RationaleInput<'a> {
    pub fn from_chain(chain: &'a ReasoningChain) -> Self {
        RationaleInput(chain.canonical_text())
    }

    /// Accepts text only if it parses as a canonical chain.
    pub fn from_canonical(text: &'a str) -> Result<Self, AdjudicatorError> {
        ReasoningChain::parse_canonical(text)?;
        Ok(RationaleInput(text))
    }

    /// Skips validation; for tests and benches that feed synthetic strings.
    pub fn from_canonical_unchecked(text: &'a str) -> Self {
        RationaleInput(text)
    }

    pub fn as_str(&self) -> &'a str {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub probability: f64,
    pub label: u8,
}

impl Verdict {
    pub fn from_probability(probability: f64) -> Self {
        Verdict {
            probability,
            label: label_for(probability),
        }
    }
}

pub trait Adjudicator: Send + Sync {
    fn adjudicate(&self, input: RationaleInput<'_>) -> Result<Verdict, AdjudicatorError>;

    fn network_operations(&self) -> u64 {
        0
    }
}

impl<T: Adjudicator + ?Sized> Adjudicator for Box<T> {
    fn adjudicate(&self, input: RationaleInput<'_>) -> Result<Verdict, AdjudicatorError> {
        (**self).adjudicate(input)
    }

    fn network_operations(&self) -> u64 {
        (**self).network_operations()
    }
}

/// Wraps an adjudicator and keeps a copy of every input it sees.
pub struct RecordingAdjudicator<A> {
    inner: A,
    seen: Mutex<Vec<String>>,
}

impl<A: Adjudicator> RecordingAdjudicator<A> {
    pub fn new(inner: A) -> Self {
        RecordingAdjudicator {
            inner,
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn inputs(&self) -> Vec<String> {
        self.seen.lock().expect("recording lock").clone()
    }
}

impl<A: Adjudicator> Adjudicator for RecordingAdjudicator<A> {
    fn adjudicate(&self, input: RationaleInput<'_>) -> Result<Verdict, AdjudicatorError> {
        self.seen.lock().expect("recording lock").push(input.as_str().to_string());
        self.inner.adjudicate(input)
    }

    fn network_operations(&self) -> u64 {
        self.inner.network_operations()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AdjudicatorConfig {
    Baseline {
        model_path: PathBuf,
    },
    Remote {
        remote_url: String,
        #[serde(default = "default_remote_timeout")]
        timeout_secs: u64,
    },
}

fn default_remote_timeout() -> u64 {
    30
}

/// Loads the baseline model or connects to a remote adjudicator. A remote one
/// must pass its health check here.
pub fn build_adjudicator(config: &AdjudicatorConfig) -> Result<Box<dyn Adjudicator>, AdjudicatorError> {
    match config {
        AdjudicatorConfig::Baseline { model_path } => Ok(Box::new(BaselineModel::load(model_path)?)),
        AdjudicatorConfig::Remote { remote_url, timeout_secs } => {
            let remote = RemoteAdjudicator::new(remote_url, Duration::from_secs(*timeout_secs));
            remote.health()?;
            Ok(Box::new(remote))
        }
    }
}
