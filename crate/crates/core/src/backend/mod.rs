//! Chat-completion backends.
//!
//! Two implementations sit behind [`ChatBackend`]: [`RemoteBackend`] talks to
//! an OpenAI-compatible `/chat/completions` endpoint with retries and an
//! on-disk response cache, and [`MockBackend`] answers from a [`MockScript`]
//! without touching the network.
//!
//! Structured output is requested through the prompt and validated on the
//! client. [`CallContext::structured`] applies the repair policy: after an
//! unparseable reply the model is re-prompted with its malformed text and the
//! required schema, at most [`REPAIR_RETRIES`] times.

mod cache;
mod mock;
pub mod parse;
mod remote;

use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::{AgentRole, BackendCallRecord};

pub use cache::ResponseCache;
pub use mock::{MockBackend, MockRule, MockScript};
pub use parse::{parse_agent_output, ParseError};
pub use remote::RemoteBackend;

/// Re-prompts allowed after an unparseable reply.
pub const REPAIR_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    #[default]
    Mock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub base_url: Option<String>,
    pub model_name: String,
    pub temperature: f64,
    pub max_retries: u32,
    pub timeout_secs: u64,
    pub cache_dir: Option<PathBuf>,
    /// Script file for the mock backend.
    pub mock_script: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            base_url: None,
            model_name: "gpt-4o".to_string(),
            temperature: 0.0,
            max_retries: 2,
            timeout_secs: 60,
            cache_dir: None,
            mock_script: None,
        }
    }
}

impl BackendConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(BackendError::Config(format!("invalid temperature {}", self.temperature)));
        }
        if self.model_name.trim().is_empty() {
            return Err(BackendError::Config("model_name is empty".into()));
        }
        if self.kind == BackendKind::Remote && self.base_url.as_deref().is_none_or(|u| u.trim().is_empty()) {
            return Err(BackendError::Config("remote backend requires base_url".into()));
        }
        Ok(())
    }
}

/// The step of the pipeline a backend call belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    WebSearch,
    SelectTeam,
    Initial,
    Refine,
    ExpansionCheck,
    Complement,
    Summarize,
    Classify,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::WebSearch => "web_search",
            Stage::SelectTeam => "select_team",
            Stage::Initial => "initial",
            Stage::Refine => "refine",
            Stage::ExpansionCheck => "expansion_check",
            Stage::Complement => "complement",
            Stage::Summarize => "summarize",
            Stage::Classify => "classify",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Routing metadata attached to every call. The mock backend matches on it;
/// the remote backend ignores it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallTags {
    pub role: Option<AgentRole>,
    pub stage: Stage,
    pub instance: String,
    /// Refinement revision being produced, loop iteration for controller
    /// checks, 0 elsewhere.
    pub round: u32,
    /// 0 for the first request, 1.. for repair re-prompts.
    pub attempt: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub system_prompt: String,
    pub user_prompt: String,
    pub response_text: String,
    pub cached: bool,
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("no mock rule matches {stage} call for instance `{instance}` and no default response is configured")]
    MockMiss { stage: Stage, instance: String },
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("cache I/O error: {0}")]
    Cache(#[from] std::io::Error),
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, system_prompt: &str, user_prompt: &str, tags: &CallTags) -> Result<ChatExchange, BackendError>;

    /// Outbound network requests issued so far.
    fn network_operations(&self) -> u64 {
        0
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, system_prompt: &str, user_prompt: &str, tags: &CallTags) -> Result<ChatExchange, BackendError> {
        (**self).complete(system_prompt, user_prompt, tags)
    }

    fn network_operations(&self) -> u64 {
        (**self).network_operations()
    }
}

/// Builds the backend described by `config`.
pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn ChatBackend>, BackendError> {
    config.validate()?;
    match config.kind {
        BackendKind::Mock => {
            let script = match &config.mock_script {
                Some(path) => MockScript::load(path)?,
                None => return Err(BackendError::Config("mock backend requires mock_script".into())),
            };
            Ok(Box::new(MockBackend::new(script)))
        }
        BackendKind::Remote => Ok(Box::new(RemoteBackend::new(config.clone())?)),
    }
}

pub(crate) fn short_digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            h.update([0u8]);
        }
        h.update(p.as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

/// A parse failure absorbed by a documented fallback, reported to the
/// transcript by the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct FallbackNote {
    pub stage: Stage,
    pub role: Option<AgentRole>,
    pub detail: String,
}

/// Result of a structured call after the repair budget.
#[derive(Debug)]
pub struct Structured<T> {
    pub value: Result<T, ParseError>,
    /// Raw text of the final reply.
    pub raw: String,
    pub calls: u32,
}

/// Per-instance handle over a backend that records every exchange.
pub struct CallContext<'a> {
    backend: &'a dyn ChatBackend,
    instance: String,
    calls: Vec<BackendCallRecord>,
    fallbacks: Vec<FallbackNote>,
}

impl<'a> CallContext<'a> {
    pub fn new(backend: &'a dyn ChatBackend, instance: impl Into<String>) -> Self {
        CallContext {
            backend,
            instance: instance.into(),
            calls: Vec::new(),
            fallbacks: Vec::new(),
        }
    }

    pub fn instance(&self) -> &str {
        &self.instance
    }

    /// One plain completion, recorded.
    pub fn complete(
        &mut self,
        stage: Stage,
        role: Option<AgentRole>,
        round: u32,
        attempt: u32,
        system: &str,
        user: &str,
    ) -> Result<ChatExchange, BackendError> {
        let tags = CallTags {
            role,
            stage,
            instance: self.instance.clone(),
            round,
            attempt,
        };
        let exchange = self.backend.complete(system, user, &tags)?;
        self.calls.push(BackendCallRecord {
            stage: stage.as_str().to_string(),
            prompt_digest: short_digest(&[system, user]),
            response_digest: short_digest(&[&exchange.response_text]),
            cached: exchange.cached,
        });
        Ok(exchange)
    }

    /// Completion whose reply must satisfy `parse`; re-prompts up to
    /// [`REPAIR_RETRIES`] times with the malformed reply and `schema`.
    #[allow(clippy::too_many_arguments)]
    pub fn structured<T>(
        &mut self,
        stage: Stage,
        role: Option<AgentRole>,
        round: u32,
        system: &str,
        user: &str,
        schema: &str,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<Structured<T>, BackendError> {
        let mut prompt = user.to_string();
        for attempt in 0..=REPAIR_RETRIES {
            let exchange = self.complete(stage, role, round, attempt, system, &prompt)?;
            let calls = attempt + 1;
            match parse(&exchange.response_text) {
                Ok(v) => {
                    return Ok(Structured {
                        value: Ok(v),
                        raw: exchange.response_text,
                        calls,
                    })
                }
                Err(err) if attempt == REPAIR_RETRIES => {
                    return Ok(Structured {
                        value: Err(err),
                        raw: exchange.response_text,
                        calls,
                    })
                }
                Err(err) => prompt = repair_prompt(user, &exchange.response_text, &err, schema),
            }
        }
        unreachable!("loop returns on the final attempt")
    }

    pub fn note_fallback(&mut self, stage: Stage, role: Option<AgentRole>, detail: impl Into<String>) {
        let detail = detail.into();
        log::warn!("instance {}: {} fallback: {}", self.instance, stage, detail);
        self.fallbacks.push(FallbackNote { stage, role, detail });
    }

    pub fn take_calls(&mut self) -> Vec<BackendCallRecord> {
        std::mem::take(&mut self.calls)
    }

    pub fn take_fallbacks(&mut self) -> Vec<FallbackNote> {
        std::mem::take(&mut self.fallbacks)
    }
}

fn repair_prompt(original: &str, malformed: &str, err: &ParseError, schema: &str) -> String {
    format!(
        "{original}\n\n---\nYour previous reply could not be used ({err}).\nPrevious reply:\n{malformed}\n---\n\
         Reply again with exactly one JSON object matching this schema and nothing else:\n{schema}"
    )
}
