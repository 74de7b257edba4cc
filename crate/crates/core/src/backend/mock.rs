//! Scripted backend for offline, deterministic runs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BackendError, CallTags, ChatBackend, ChatExchange, Stage};
use crate::types::AgentRole;

/// One scripted reply. Every `None` matcher is a wildcard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<AgentRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    /// Substring the user prompt must contain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    pub response: String,
}

impl MockRule {
    pub fn new(response: impl Into<String>) -> Self {
        MockRule {
            role: None,
            stage: None,
            instance: None,
            round: None,
            attempt: None,
            contains: None,
            response: response.into(),
        }
    }

    pub fn role(mut self, role: AgentRole) -> Self {
        self.role = Some(role);
        self
    }

    pub fn stage(mut self, stage: Stage) -> Self {
        self.stage = Some(stage);
        self
    }

    pub fn instance(mut self, instance: impl Into<String>) -> Self {
        self.instance = Some(instance.into());
        self
    }

    pub fn round(mut self, round: u32) -> Self {
        self.round = Some(round);
        self
    }

    pub fn attempt(mut self, attempt: u32) -> Self {
        self.attempt = Some(attempt);
        self
    }

    pub fn contains(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    fn matches(&self, tags: &CallTags, user_prompt: &str) -> bool {
        self.role.is_none_or(|r| tags.role == Some(r))
            && self.stage.is_none_or(|s| tags.stage == s)
            && self.instance.as_deref().is_none_or(|i| tags.instance == i)
            && self.round.is_none_or(|r| tags.round == r)
            && self.attempt.is_none_or(|a| tags.attempt == a)
            && self.contains.as_deref().is_none_or(|c| user_prompt.contains(c))
    }
}

/// Ordered rules, first match wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    #[serde(default)]
    pub rules: Vec<MockRule>,
    #[serde(default)]
    pub default_response: Option<String>,
}

impl MockScript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Config(format!("cannot read mock script {}: {e}", path.display())))?;
        let script: MockScript = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("invalid mock script {}: {e}", path.display())))?;
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if let Some(i) = self.rules.iter().position(|r| r.response.is_empty()) {
            return Err(BackendError::Config(format!("mock rule {i} has an empty response")));
        }
        if self.default_response.as_deref() == Some("") {
            return Err(BackendError::Config("mock default response is empty".into()));
        }
        Ok(())
    }

    pub fn select(&self, tags: &CallTags, user_prompt: &str) -> Option<&str> {
        self.rules
            .iter()
            .find(|r| r.matches(tags, user_prompt))
            .map(|r| r.response.as_str())
            .or(self.default_response.as_deref())
    }
}

#[derive(Debug, Clone)]
pub struct MockBackend {
    script: MockScript,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend { script }
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, system_prompt: &str, user_prompt: &str, tags: &CallTags) -> Result<ChatExchange, BackendError> {
        let response = self.script.select(tags, user_prompt).ok_or_else(|| BackendError::MockMiss {
            stage: tags.stage,
            instance: tags.instance.clone(),
        })?;
        Ok(ChatExchange {
            system_prompt: system_prompt.to_string(),
            user_prompt: user_prompt.to_string(),
            response_text: response.to_string(),
            cached: false,
        })
    }
}
