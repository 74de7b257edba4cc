//! Multi-agent sarcasm detection: a controller drives a team of analytical
//! agents over an input text until their judgements settle, a summarizer
//! folds the team's outputs into a canonical reasoning chain, and a separate
//! adjudicator classifies that chain.

pub mod adjudicator;
pub mod agents;
pub mod backend;
pub mod dataset;
pub mod engine;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod support;
pub mod testkit;
pub mod types;

pub use adjudicator::{Adjudicator, AdjudicatorConfig, AdjudicatorError, BaselineModel, RationaleInput, Verdict};
pub use agents::{AgentPool, PromptSet};
pub use backend::{BackendConfig, BackendKind, ChatBackend, MockBackend, MockScript};
pub use dataset::{DatasetError, DatasetSplit};
pub use engine::{Engine, EngineConfig, EngineError};
pub use metrics::{ConfusionMatrix, MetricsReport};
pub use support::{SearchProvider, SearchProviderConfig};
pub use types::*;
