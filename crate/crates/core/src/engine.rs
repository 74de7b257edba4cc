//! The controller loop.
//!
//! For each instance the engine optionally gathers search evidence, lets the
//! controller pick an initial team, then alternates targeted refinement of
//! the most ambivalent agent with controller-driven expansion until the team
//! is consistent, the controller stops, the pool is exhausted, or the
//! refinement cap is hit. The final team state is summarized into a
//! [`ReasoningChain`], and every step is recorded in an [`EngineTranscript`].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agents::AgentPool;
use crate::backend::parse::first_json_value;
use crate::backend::{BackendError, CallContext, ChatBackend, ParseError, Stage};
use crate::support::{decide_and_extract, summarize, SearchProvider};
use crate::types::{
    AgentOutput, AgentRole, AgentTeamState, DatasetInstance, EngineEvent, EngineTranscript, EvidenceSnippet,
    ReasoningChain, TerminationReason, ValidationError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// An agent counts as ambivalent while `|σ − 0.5| < consistency_margin`.
    pub consistency_margin: f64,
    /// Cap on refinements per instance.
    pub max_iterations: u32,
    /// Intensity spread above which the heuristic expansion check expands.
    pub expansion_fallback_spread: f64,
    pub enable_evolving: bool,
    pub enable_web_search: bool,
    pub disabled_roles: BTreeSet<AgentRole>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            consistency_margin: 0.20,
            max_iterations: 12,
            expansion_fallback_spread: 0.40,
            enable_evolving: true,
            enable_web_search: true,
            disabled_roles: BTreeSet::new(),
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.consistency_margin > 0.0 && self.consistency_margin < 0.5) {
            return Err(EngineError::Config(format!(
                "consistency_margin must lie in (0, 0.5), got {}",
                self.consistency_margin
            )));
        }
        if self.max_iterations < 1 {
            return Err(EngineError::Config("max_iterations must be at least 1".into()));
        }
        if !self.expansion_fallback_spread.is_finite() {
            return Err(EngineError::Config("expansion_fallback_spread must be finite".into()));
        }
        if self.pool().is_empty() {
            return Err(EngineError::EmptyPool);
        }
        Ok(())
    }

    /// All core roles minus the disabled ones, in canonical order.
    pub fn pool(&self) -> Vec<AgentRole> {
        AgentRole::ALL
            .into_iter()
            .filter(|r| !self.disabled_roles.contains(r))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("the active team is empty")]
    EmptyTeam,
    #[error("the agent pool is empty")]
    EmptyPool,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("invalid engine configuration: {0}")]
    Config(String),
    #[error("invalid team state: {0}")]
    State(#[from] ValidationError),
}

/// Distances closer than this count as equal, so decimal ties such as
/// 0.2 and 0.8 are not decided by rounding error.
pub const DISTANCE_TOLERANCE: f64 = 1e-9;

/// The active agent whose intensity is closest to 0.5; ties go to the role
/// earliest in canonical order.
pub fn find_ambivalent(state: &AgentTeamState) -> Result<AgentRole, EngineError> {
    let mut best: Option<(f64, AgentRole)> = None;
    for &role in state.active() {
        let d = state.output(role).ok_or(ValidationError::MissingOutput(role))?.ambivalence_distance();
        // active is kept in canonical order, so a strict comparison keeps the earliest tie
        if best.is_none_or(|(bd, _)| d < bd - DISTANCE_TOLERANCE) {
            best = Some((d, role));
        }
    }
    best.map(|(_, r)| r).ok_or(EngineError::EmptyTeam)
}

/// True when no active agent remains within the margin of 0.5.
pub fn check_consistency(state: &AgentTeamState, config: &EngineConfig) -> bool {
    state
        .outputs()
        .all(|o| o.ambivalence_distance() + DISTANCE_TOLERANCE >= config.consistency_margin)
}

/// Heuristic expansion verdict: expand when the intensity spread exceeds
/// `spread`.
pub fn expansion_heuristic(state: &AgentTeamState, spread: f64) -> bool {
    let (lo, hi) = state
        .outputs()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| (lo.min(o.intensity), hi.max(o.intensity)));
    hi - lo > spread
}

pub const CONTROLLER_SYSTEM: &str = "You are the Controller Agent that coordinates a team of specialized \
sarcasm analysis agents. Follow the instructions exactly and respond with exactly one JSON object and nothing else.";

pub const TEAM_SCHEMA: &str = r#"{"roles": ["<role id>", "..."]}"#;
pub const EXPANSION_SCHEMA: &str = r#"{"verdict": "expand" | "stop", "reason": "<short reason>"}"#;
pub const COMPLEMENT_SCHEMA: &str = r#"{"role": "<role id>"}"#;

fn role_catalogue(roles: &[AgentRole]) -> String {
    roles
        .iter()
        .map(|r| format!("- {} ({}): {}", r.id(), r.display_name(), r.analytical_charter()))
        .collect::<Vec<_>>()
        .join("\n")
}

fn analyses_block(state: &AgentTeamState) -> String {
    state
        .outputs()
        .map(|o| format!("- {} intensity {:.2}: {}", o.role.id(), o.intensity, o.explanation))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn team_prompt(text: &str, pool: &[AgentRole]) -> String {
    format!(
        "Text:\n\"\"\"\n{text}\n\"\"\"\n\nAvailable analysis agents:\n{}\n\n\
         Select the agents whose analytical perspectives are most relevant to this text.\nReply as: {TEAM_SCHEMA}",
        role_catalogue(pool)
    )
}

pub fn expansion_prompt(state: &AgentTeamState, text: &str) -> String {
    format!(
        "Text:\n\"\"\"\n{text}\n\"\"\"\n\nCurrent analyses of the active team:\n{}\n\n\
         Is the collective analysis incomplete, contradictory, or logically stuck? Answer \"expand\" if a \
         further perspective should join the team, otherwise \"stop\".\nReply as: {EXPANSION_SCHEMA}",
        analyses_block(state)
    )
}

pub fn complement_prompt(state: &AgentTeamState, text: &str, inactive: &[AgentRole]) -> String {
    format!(
        "Text:\n\"\"\"\n{text}\n\"\"\"\n\nCurrent analyses of the active team:\n{}\n\nInactive agents:\n{}\n\n\
         Choose the one inactive agent that can most effectively address the gaps in the current analysis.\n\
         Reply as: {COMPLEMENT_SCHEMA}",
        analyses_block(state),
        role_catalogue(inactive)
    )
}

/// Role ids from `["SIA", ...]` or `{"roles": [...]}`.
pub fn parse_team_selection(raw: &str) -> Result<Vec<String>, ParseError> {
    let value = first_json_value(raw, |v| v.is_array() || v.get("roles").is_some_and(Value::is_array))
        .ok_or(ParseError::NoObject)?;
    let list = match &value {
        Value::Array(items) => items,
        other => other["roles"].as_array().expect("accepted above"),
    };
    Ok(list.iter().filter_map(Value::as_str).map(str::to_string).collect())
}

pub fn parse_expansion(raw: &str) -> Result<(bool, String), ParseError> {
    let value = first_json_value(raw, |v| v.get("verdict").is_some()).ok_or(ParseError::NoObject)?;
    let verdict = match value["verdict"].as_str().map(|s| s.trim().to_ascii_lowercase()) {
        Some(v) if v == "expand" => true,
        Some(v) if v == "stop" => false,
        _ => {
            return Err(ParseError::InvalidField {
                field: "verdict",
                reason: format!("expected \"expand\" or \"stop\", got {}", value["verdict"]),
            })
        }
    };
    let reason = value.get("reason").and_then(Value::as_str).unwrap_or_default().to_string();
    Ok((verdict, reason))
}

/// A role id from `{"role": "EPIA"}` or a bare id; must be in `inactive`.
pub fn parse_complement(raw: &str, inactive: &[AgentRole]) -> Result<AgentRole, ParseError> {
    let id = match first_json_value(raw, |v| v.get("role").is_some_and(Value::is_string)) {
        Some(v) => v["role"].as_str().expect("accepted above").to_string(),
        None => raw.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '.' || c.is_whitespace()).to_string(),
    };
    match AgentRole::from_id(&id) {
        Some(role) if inactive.contains(&role) => Ok(role),
        _ => Err(ParseError::InvalidField {
            field: "role",
            // the id is not echoed: it may name a role excluded from the pool
            reason: "reply does not name an inactive role".into(),
        }),
    }
}

#[derive(Debug, Clone)]
pub struct EngineRun {
    pub chain: ReasoningChain,
    pub transcript: EngineTranscript,
}

#[derive(Debug)]
pub struct InstanceFailure {
    pub error: EngineError,
    pub transcript: EngineTranscript,
}

#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    agents: AgentPool,
}

impl Engine {
    pub fn new(config: EngineConfig, agents: AgentPool) -> Result<Self, EngineError> {
        config.validate()?;
        Ok(Engine { config, agents })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn agents(&self) -> &AgentPool {
        &self.agents
    }

    /// Controller picks the initial team; falls back to the whole pool when
    /// the selection is empty or unusable. Returns the state and whether the
    /// fallback fired.
    pub fn instantiate_team(
        &self,
        ctx: &mut CallContext<'_>,
        text: &str,
        pool: &[AgentRole],
        evidence: &[EvidenceSnippet],
    ) -> Result<(AgentTeamState, bool), EngineError> {
        if pool.is_empty() {
            return Err(EngineError::EmptyPool);
        }
        let res = ctx.structured(
            Stage::SelectTeam,
            None,
            0,
            CONTROLLER_SYSTEM,
            &team_prompt(text, pool),
            TEAM_SCHEMA,
            parse_team_selection,
        )?;
        let selected: BTreeSet<AgentRole> = match &res.value {
            Ok(ids) => ids.iter().filter_map(|id| AgentRole::from_id(id)).filter(|r| pool.contains(r)).collect(),
            Err(_) => BTreeSet::new(),
        };
        let fallback = selected.is_empty();
        let team: Vec<AgentRole> = if fallback {
            let why = match res.value {
                Ok(_) => "selection empty after intersecting with the pool".to_string(),
                Err(e) => e.to_string(),
            };
            ctx.note_fallback(Stage::SelectTeam, None, format!("full pool activated: {why}"));
            pool.to_vec()
        } else {
            selected.into_iter().collect()
        };
        let mut outputs = Vec::with_capacity(team.len());
        for role in team {
            outputs.push(self.agents.initial_analysis(ctx, role, text, evidence)?);
        }
        Ok((AgentTeamState::new(pool.iter().copied(), outputs)?, fallback))
    }

    /// Controller verdict on whether to expand; `(verdict, reason, fallback)`.
    pub fn check_expansion(
        &self,
        ctx: &mut CallContext<'_>,
        state: &AgentTeamState,
        text: &str,
        iteration: u32,
    ) -> Result<(bool, String, bool), EngineError> {
        let res = ctx.structured(
            Stage::ExpansionCheck,
            None,
            iteration,
            CONTROLLER_SYSTEM,
            &expansion_prompt(state, text),
            EXPANSION_SCHEMA,
            parse_expansion,
        )?;
        Ok(match res.value {
            Ok((verdict, reason)) => (verdict, reason, false),
            Err(err) => {
                let verdict = expansion_heuristic(state, self.config.expansion_fallback_spread);
                ctx.note_fallback(Stage::ExpansionCheck, None, format!("spread heuristic used: {err}"));
                let reason = format!(
                    "heuristic: intensity spread {} {:.2}",
                    if verdict { ">" } else { "<=" },
                    self.config.expansion_fallback_spread
                );
                (verdict, reason, true)
            }
        })
    }

    /// Controller picks the inactive role that best fills the gaps; falls
    /// back to the first inactive role in canonical order.
    pub fn select_complement(
        &self,
        ctx: &mut CallContext<'_>,
        state: &AgentTeamState,
        text: &str,
        inactive: &[AgentRole],
        iteration: u32,
    ) -> Result<AgentRole, EngineError> {
        let first = *inactive.first().ok_or(EngineError::EmptyPool)?;
        let res = ctx.structured(
            Stage::Complement,
            None,
            iteration,
            CONTROLLER_SYSTEM,
            &complement_prompt(state, text, inactive),
            COMPLEMENT_SCHEMA,
            |raw| parse_complement(raw, inactive),
        )?;
        Ok(match res.value {
            Ok(role) => role,
            Err(err) => {
                ctx.note_fallback(Stage::Complement, None, format!("first inactive role {first} chosen: {err}"));
                first
            }
        })
    }

    /// Runs the full loop for one instance.
    pub fn run_instance(
        &self,
        backend: &dyn ChatBackend,
        search: &dyn SearchProvider,
        instance: &DatasetInstance,
    ) -> Result<EngineRun, InstanceFailure> {
        let mut ctx = CallContext::new(backend, instance.id.clone());
        let mut transcript = EngineTranscript::new(instance.id.clone());
        match self.drive(&mut ctx, &mut transcript, search, &instance.text) {
            Ok(chain) => Ok(EngineRun { chain, transcript }),
            Err(error) => {
                flush(&mut ctx, &mut transcript);
                transcript.failure = Some(error.to_string());
                Err(InstanceFailure { error, transcript })
            }
        }
    }

    fn drive(
        &self,
        ctx: &mut CallContext<'_>,
        transcript: &mut EngineTranscript,
        search: &dyn SearchProvider,
        text: &str,
    ) -> Result<ReasoningChain, EngineError> {
        let pool = self.config.pool();

        let mut evidence = Vec::new();
        if self.config.enable_web_search {
            let query = decide_and_extract(ctx, text)?;
            flush(ctx, transcript);
            if let Some(query) = query {
                let (snippets, error) = match search.search(&query) {
                    Ok(s) => (s, None),
                    Err(e) => {
                        log::warn!("instance {}: {e}; continuing without evidence", ctx.instance());
                        (Vec::new(), Some(e.to_string()))
                    }
                };
                evidence = snippets.clone();
                transcript.events.push(EngineEvent::SearchInvoked {
                    keywords: query.keywords().to_vec(),
                    snippets,
                    error,
                });
            }
        }

        let (mut state, fallback) = self.instantiate_team(ctx, text, &pool, &evidence)?;
        flush(ctx, transcript);
        transcript.events.push(EngineEvent::Instantiated {
            roles: state.active().to_vec(),
            fallback,
            outputs: state.outputs().cloned().collect(),
        });

        let reason = if self.config.enable_evolving {
            self.evolve(ctx, transcript, &mut state, text, &evidence)?
        } else {
            TerminationReason::StaticAnalysis
        };
        transcript.events.push(EngineEvent::Terminated { reason });

        let chain = summarize(ctx, &state, text)?;
        flush(ctx, transcript);
        transcript.events.push(EngineEvent::Summarized { chain: chain.clone() });
        Ok(chain)
    }

    fn evolve(
        &self,
        ctx: &mut CallContext<'_>,
        transcript: &mut EngineTranscript,
        state: &mut AgentTeamState,
        text: &str,
        evidence: &[EvidenceSnippet],
    ) -> Result<TerminationReason, EngineError> {
        let mut refinements = 0u32;
        loop {
            let target = find_ambivalent(state)?;
            let prior = state.output(target).cloned().ok_or(ValidationError::MissingOutput(target))?;
            let peers: Vec<&AgentOutput> = state.outputs().filter(|o| o.role != target).collect();
            let refined = self.agents.refine_analysis(ctx, &prior, &peers, text, evidence)?;
            state.replace_output(refined.clone())?;
            refinements += 1;
            flush(ctx, transcript);
            transcript.events.push(EngineEvent::Refined {
                role: target,
                before: prior,
                after: refined,
            });

            if check_consistency(state, &self.config) {
                return Ok(TerminationReason::Consistent);
            }
            if refinements >= self.config.max_iterations {
                return Ok(TerminationReason::IterationCap);
            }

            let (verdict, reason, fallback) = self.check_expansion(ctx, state, text, refinements)?;
            flush(ctx, transcript);
            transcript.events.push(EngineEvent::ExpansionChecked { verdict, reason, fallback });
            if !verdict {
                return Ok(TerminationReason::ControllerStop);
            }

            let inactive = state.inactive();
            if inactive.is_empty() {
                return Ok(TerminationReason::PoolExhausted);
            }
            let newcomer = self.select_complement(ctx, state, text, &inactive, refinements)?;
            let output = self.agents.initial_analysis(ctx, newcomer, text, evidence)?;
            state.activate(output.clone())?;
            flush(ctx, transcript);
            transcript.events.push(EngineEvent::Expanded { role: newcomer, output });
        }
    }
}

fn flush(ctx: &mut CallContext<'_>, transcript: &mut EngineTranscript) {
    transcript.backend_calls.extend(ctx.take_calls());
    transcript.events.extend(ctx.take_fallbacks().into_iter().map(|n| EngineEvent::Fallback {
        stage: n.stage.as_str().to_string(),
        role: n.role,
        detail: n.detail,
    }));
}
