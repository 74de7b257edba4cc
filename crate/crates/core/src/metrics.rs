//! Accuracy, macro-F1 and per-role activation/intensity statistics.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{AgentRole, EngineTranscript, Prediction};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("nothing to evaluate")]
    EmptyEvaluation,
    #[error("no label for instance {0:?}")]
    MissingLabel(String),
    #[error("{predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    pub fn from_labels(predicted: &[u8], actual: &[u8]) -> Result<Self, MetricsError> {
        if predicted.len() != actual.len() {
            return Err(MetricsError::LengthMismatch {
                predictions: predicted.len(),
                labels: actual.len(),
            });
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &y) in predicted.iter().zip(actual) {
            cm.add(p, y);
        }
        Ok(cm)
    }

    pub fn add(&mut self, predicted: u8, actual: u8) {
        match (predicted == 1, actual == 1) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(tp: u64, fp: u64, fn_: u64) -> f64 {
    // 2PR/(P+R) simplifies to 2tp/(2tp+fp+fn); zero denominator counts as 0
    ratio(2 * tp, 2 * tp + fp + fn_)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    Ok(ratio(cm.tp + cm.tn, cm.total()))
}

/// Unweighted mean of the F1 of class 1 and class 0.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64, MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    let positive = f1(cm.tp, cm.fp, cm.fn_);
    let negative = f1(cm.tn, cm.fn_, cm.fp);
    Ok((positive + negative) / 2.0)
}

/// Tallies predictions against a label lookup.
pub fn score_predictions(predictions: &[Prediction], labels: &HashMap<String, u8>) -> Result<ConfusionMatrix, MetricsError> {
    let mut cm = ConfusionMatrix::default();
    for p in predictions {
        let y = labels.get(&p.instance_id).ok_or_else(|| MetricsError::MissingLabel(p.instance_id.clone()))?;
        cm.add(p.label, *y);
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleDynamics {
    pub activation_rate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_intensity_sarcastic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_intensity_nonsarcastic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDynamics {
    /// Transcripts that reached a final chain.
    pub instances: usize,
    pub roles: BTreeMap<AgentRole, RoleDynamics>,
}

/// A role counts as activated when it has a section in the final chain;
/// intensities are taken from those sections. Transcripts without a final
/// chain (failed instances) are left out.
pub fn agent_dynamics(transcripts: &[EngineTranscript], labels: &HashMap<String, u8>) -> Result<AgentDynamics, MetricsError> {
    #[derive(Default)]
    struct Acc {
        active: usize,
        sum: [f64; 2],
        n: [usize; 2],
    }
    let mut acc: BTreeMap<AgentRole, Acc> = AgentRole::ALL.iter().map(|r| (*r, Acc::default())).collect();
    let mut instances = 0;
    for t in transcripts {
        let y = *labels.get(&t.instance_id).ok_or_else(|| MetricsError::MissingLabel(t.instance_id.clone()))?;
        let Some(chain) = t.chain() else { continue };
        instances += 1;
        for section in chain.sections() {
            let a = acc.get_mut(&section.role).expect("all roles seeded");
            a.active += 1;
            a.sum[usize::from(y)] += section.intensity;
            a.n[usize::from(y)] += 1;
        }
    }
    if instances == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    let mean = |a: &Acc, k: usize| (a.n[k] > 0).then(|| a.sum[k] / a.n[k] as f64);
    let roles = acc
        .into_iter()
        .map(|(role, a)| {
            (
                role,
                RoleDynamics {
                    activation_rate: a.active as f64 / instances as f64,
                    mean_intensity_sarcastic: mean(&a, 1),
                    mean_intensity_nonsarcastic: mean(&a, 0),
                },
            )
        })
        .collect();
    Ok(AgentDynamics { instances, roles })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFailureRecord {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub n: u64,
    /// Absent when nothing was scored.
    pub accuracy: Option<f64>,
    pub macro_f1: Option<f64>,
    pub confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamics: Option<AgentDynamics>,
    #[serde(default)]
    pub failures: Vec<InstanceFailureRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl MetricsReport {
    pub fn from_confusion(dataset: impl Into<String>, confusion: ConfusionMatrix) -> Self {
        MetricsReport {
            dataset: dataset.into(),
            n: confusion.total(),
            accuracy: accuracy(&confusion).ok(),
            macro_f1: macro_f1(&confusion).ok(),
            confusion,
            dynamics: None,
            failures: Vec::new(),
            seed: None,
        }
    }
}
