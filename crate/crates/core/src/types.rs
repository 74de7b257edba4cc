//! Shared domain types: agent roles, agent outputs, team state, reasoning
//! chains, dataset instances, predictions and engine transcripts.
//!
//! Everything here is an immutable value once constructed and is safe to
//! send between worker threads.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One of the six core analysis roles.
///
/// The derived `Ord` is the canonical role order used for every
/// deterministic tie-break and for section ordering in reasoning chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AgentRole {
    #[serde(rename = "SIA")]
    Sia,
    #[serde(rename = "PCA")]
    Pca,
    #[serde(rename = "RDA")]
    Rda,
    #[serde(rename = "EPIA")]
    Epia,
    #[serde(rename = "CSVA")]
    Csva,
    #[serde(rename = "PeCA")]
    Peca,
}

impl AgentRole {
    /// All roles in canonical order.
    pub const ALL: [AgentRole; 6] = [
        AgentRole::Sia,
        AgentRole::Pca,
        AgentRole::Rda,
        AgentRole::Epia,
        AgentRole::Csva,
        AgentRole::Peca,
    ];

    pub fn id(self) -> &'static str {
        match self {
            AgentRole::Sia => "SIA",
            AgentRole::Pca => "PCA",
            AgentRole::Rda => "RDA",
            AgentRole::Epia => "EPIA",
            AgentRole::Csva => "CSVA",
            AgentRole::Peca => "PeCA",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            AgentRole::Sia => "Semantic Incongruity Agent",
            AgentRole::Pca => "Pragmatic Contrast Agent",
            AgentRole::Rda => "Rhetorical Device Agent",
            AgentRole::Epia => "Emotion Polarity Inverter Agent",
            AgentRole::Csva => "Common Sense Violation Agent",
            AgentRole::Peca => "Persona Conflict Agent",
        }
    }

    /// The role's analytical charter, embedded verbatim in its prompts.
    pub fn analytical_charter(self) -> &'static str {
        match self {
            AgentRole::Sia => "Identifies and quantifies conflicts between the text's literal meaning and established world knowledge.",
            AgentRole::Pca => "Analyzes the discordance between an utterance's formulation and its pragmatic context.",
            AgentRole::Rda => "Detects key figures of speech indicative of sarcasm, such as hyperbole and understatement.",
            AgentRole::Epia => "Measures the contradiction between the text's overtly expressed emotion and the sentiment that would be objectively inferred from the situation.",
            AgentRole::Csva => "Evaluates if the text's content violates widely held principles of common sense.",
            AgentRole::Peca => "Examines and reports on inconsistencies between the speaker's projected persona and the content of their statement.",
        }
    }

    /// Position in the canonical order (0-based).
    pub fn rank(self) -> usize {
        self as usize
    }

    /// Case-insensitive lookup by id.
    pub fn from_id(id: &str) -> Option<AgentRole> {
        let id = id.trim();
        AgentRole::ALL
            .into_iter()
            .find(|r| r.id().eq_ignore_ascii_case(id))
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown agent role `{0}`")]
pub struct UnknownRole(pub String);

impl FromStr for AgentRole {
    type Err = UnknownRole;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentRole::from_id(s).ok_or_else(|| UnknownRole(s.to_string()))
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ValidationError {
    #[error("intensity {0} outside [0, 1]")]
    IntensityOutOfRange(f64),
    #[error("explanation is empty")]
    EmptyExplanation,
    #[error("reasoning chain sections must be unique and in canonical role order")]
    SectionOrder,
    #[error("label must be 0 or 1, got {0}")]
    Label(i64),
    #[error("instance text is empty")]
    EmptyText,
    #[error("role {0} is active but not in the pool")]
    NotInPool(AgentRole),
    #[error("role {0} is active but has no output")]
    MissingOutput(AgentRole),
    #[error("malformed canonical chain at line {line}: {reason}")]
    CanonicalText { line: usize, reason: String },
}

/// Marker explanation for an agent whose responses could not be parsed.
pub const UNPARSEABLE_EXPLANATION: &str = "[unparseable]";

/// One agent's analysis: an intensity score in `[0, 1]` plus its explanation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutput {
    pub role: AgentRole,
    pub intensity: f64,
    pub explanation: String,
    /// 0 for the initial analysis, incremented by each refinement.
    pub revision: u32,
}

impl AgentOutput {
    pub fn new(
        role: AgentRole,
        intensity: f64,
        explanation: impl Into<String>,
        revision: u32,
    ) -> Result<Self, ValidationError> {
        if !(0.0..=1.0).contains(&intensity) {
            return Err(ValidationError::IntensityOutOfRange(intensity));
        }
        let explanation = explanation.into();
        if explanation.trim().is_empty() {
            return Err(ValidationError::EmptyExplanation);
        }
        Ok(AgentOutput {
            role,
            intensity,
            explanation,
            revision,
        })
    }

    /// Substitute output used after the repair budget is exhausted.
    ///
    /// Sits at the ambivalence midpoint so the agent becomes the next
    /// refinement target.
    pub fn sentinel(role: AgentRole, revision: u32) -> Self {
        AgentOutput {
            role,
            intensity: 0.5,
            explanation: UNPARSEABLE_EXPLANATION.to_string(),
            revision,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.explanation == UNPARSEABLE_EXPLANATION
    }

    /// Distance of the intensity from the midpoint, `|σ − 0.5|`.
    pub fn ambivalence_distance(&self) -> f64 {
        (self.intensity - 0.5).abs()
    }
}

/// Partition of the agent pool into active and inactive roles, with the
/// latest output of every active role.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentTeamState {
    pool: Vec<AgentRole>,
    active: Vec<AgentRole>,
    outputs: BTreeMap<AgentRole, AgentOutput>,
    iteration: u32,
}

impl AgentTeamState {
    /// Builds a state from a pool and the initial outputs; the active set is
    /// the set of roles that have an output.
    pub fn new(
        pool: impl IntoIterator<Item = AgentRole>,
        initial: impl IntoIterator<Item = AgentOutput>,
    ) -> Result<Self, ValidationError> {
        let mut pool: Vec<AgentRole> = pool.into_iter().collect();
        pool.sort();
        pool.dedup();
        let mut state = AgentTeamState {
            pool,
            active: Vec::new(),
            outputs: BTreeMap::new(),
            iteration: 0,
        };
        for output in initial {
            state.activate(output)?;
        }
        Ok(state)
    }

    pub fn pool(&self) -> &[AgentRole] {
        &self.pool
    }

    pub fn active(&self) -> &[AgentRole] {
        &self.active
    }

    /// Roles in the pool that are not active, in canonical order.
    pub fn inactive(&self) -> Vec<AgentRole> {
        self.pool
            .iter()
            .copied()
            .filter(|r| !self.active.contains(r))
            .collect()
    }

    pub fn output(&self, role: AgentRole) -> Option<&AgentOutput> {
        self.outputs.get(&role)
    }

    /// Outputs of every active role in canonical order.
    pub fn outputs(&self) -> impl Iterator<Item = &AgentOutput> {
        self.outputs.values()
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn is_active(&self, role: AgentRole) -> bool {
        self.active.contains(&role)
    }

    /// Adds a role (with its first output) to the active team.
    pub fn activate(&mut self, output: AgentOutput) -> Result<(), ValidationError> {
        let role = output.role;
        if !self.pool.contains(&role) {
            return Err(ValidationError::NotInPool(role));
        }
        if let Err(pos) = self.active.binary_search(&role) {
            self.active.insert(pos, role);
        }
        self.outputs.insert(role, output);
        Ok(())
    }

    /// Replaces the output of an already active role and advances the
    /// iteration counter. Other outputs are untouched.
    pub fn replace_output(&mut self, output: AgentOutput) -> Result<AgentOutput, ValidationError> {
        let role = output.role;
        match self.outputs.get_mut(&role) {
            Some(slot) => {
                self.iteration += 1;
                Ok(std::mem::replace(slot, output))
            }
            None => Err(ValidationError::MissingOutput(role)),
        }
    }
}

/// One role's final analysis as it appears in a reasoning chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainSection {
    pub role: AgentRole,
    pub intensity: f64,
    pub explanation: String,
}

impl From<&AgentOutput> for ChainSection {
    fn from(o: &AgentOutput) -> Self {
        ChainSection {
            role: o.role,
            intensity: o.intensity,
            explanation: o.explanation.clone(),
        }
    }
}

/// The synthesized rationale: per-agent sections plus a summary, with a
/// fixed textual rendering that is the adjudicator's only input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasoningChain {
    per_agent_sections: Vec<ChainSection>,
    summary: String,
    canonical_text: String,
}

impl ReasoningChain {
    pub fn new(sections: Vec<ChainSection>, summary: impl Into<String>) -> Result<Self, ValidationError> {
        if sections.windows(2).any(|w| w[0].role >= w[1].role) {
            return Err(ValidationError::SectionOrder);
        }
        if let Some(s) = sections.iter().find(|s| !(0.0..=1.0).contains(&s.intensity)) {
            return Err(ValidationError::IntensityOutOfRange(s.intensity));
        }
        let summary = summary.into();
        let canonical_text = render_sections(&sections, &summary);
        Ok(ReasoningChain {
            per_agent_sections: sections,
            summary,
            canonical_text,
        })
    }

    pub fn sections(&self) -> &[ChainSection] {
        &self.per_agent_sections
    }

    pub fn summary(&self) -> &str {
        &self.summary
    }

    pub fn canonical_text(&self) -> &str {
        &self.canonical_text
    }

    /// Parses canonical text back into sections and summary.
    ///
    /// Intensities are recovered at the two-decimal precision of the
    /// rendering.
    pub fn parse_canonical(text: &str) -> Result<Self, ValidationError> {
        let (sections, summary) = parse_canonical_text(text)?;
        ReasoningChain::new(sections, summary)
    }
}

/// Renders the canonical flat text of a chain.
pub fn render_canonical_chain(chain: &ReasoningChain) -> String {
    render_sections(&chain.per_agent_sections, &chain.summary)
}

fn render_sections(sections: &[ChainSection], summary: &str) -> String {
    let mut out = String::new();
    for s in sections {
        out.push_str(&format!("[{} intensity={:.2}]\n", s.role.id(), s.intensity));
        out.push_str(&s.explanation);
        out.push('\n');
    }
    out.push_str("[SUMMARY]\n");
    out.push_str(summary);
    out.push('\n');
    out
}

enum Header {
    Section(AgentRole, f64),
    Summary,
}

fn parse_header(line: &str) -> Option<Header> {
    let inner = line.strip_prefix('[')?.strip_suffix(']')?;
    if inner == "SUMMARY" {
        return Some(Header::Summary);
    }
    let (id, rest) = inner.split_once(' ')?;
    let role = AgentRole::ALL.into_iter().find(|r| r.id() == id)?;
    let value = rest.strip_prefix("intensity=")?;
    // exactly the `d.dd` shape produced by the renderer
    let bytes = value.as_bytes();
    if bytes.len() != 4 || bytes[1] != b'.' || !value.chars().filter(|&c| c != '.').all(|c| c.is_ascii_digit()) {
        return None;
    }
    Some(Header::Section(role, value.parse().ok()?))
}

/// True when `line` would be read as a section or summary header.
pub fn is_canonical_header(line: &str) -> bool {
    parse_header(line).is_some()
}

fn parse_canonical_text(text: &str) -> Result<(Vec<ChainSection>, String), ValidationError> {
    let body = text.strip_suffix('\n').ok_or(ValidationError::CanonicalText {
        line: 0,
        reason: "missing trailing newline".into(),
    })?;
    let mut sections = Vec::new();
    let mut current: Option<(Header, Vec<&str>)> = None;
    let mut summary = None;
    for (idx, line) in body.split('\n').enumerate() {
        if let Some(h) = parse_header(line) {
            if let Some((prev, lines)) = current.take() {
                match prev {
                    Header::Section(role, intensity) => sections.push(ChainSection {
                        role,
                        intensity,
                        explanation: lines.join("\n"),
                    }),
                    Header::Summary => {
                        return Err(ValidationError::CanonicalText {
                            line: idx + 1,
                            reason: "header after summary".into(),
                        })
                    }
                }
            }
            current = Some((h, Vec::new()));
        } else {
            match current.as_mut() {
                Some((_, lines)) => lines.push(line),
                None => {
                    return Err(ValidationError::CanonicalText {
                        line: idx + 1,
                        reason: "text before first header".into(),
                    })
                }
            }
        }
    }
    if let Some((Header::Summary, lines)) = current { summary = Some(lines.join("\n")) }
    let summary = summary.ok_or(ValidationError::CanonicalText {
        line: 0,
        reason: "missing [SUMMARY] section".into(),
    })?;
    Ok((sections, summary))
}

/// One labelled input text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetInstance {
    pub id: String,
    pub text: String,
    /// 1 = sarcastic.
    pub label: u8,
}

impl DatasetInstance {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: i64) -> Result<Self, ValidationError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(ValidationError::EmptyText);
        }
        let label = match label {
            0 => 0,
            1 => 1,
            other => return Err(ValidationError::Label(other)),
        };
        Ok(DatasetInstance {
            id: id.into(),
            text,
            label,
        })
    }
}

/// Probability at or above which a chain is labelled sarcastic.
pub const DECISION_THRESHOLD: f64 = 0.5;

pub fn label_for(probability: f64) -> u8 {
    u8::from(probability >= DECISION_THRESHOLD)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub probability: f64,
    pub label: u8,
    pub chain: ReasoningChain,
}

impl Prediction {
    pub fn new(instance_id: impl Into<String>, probability: f64, chain: ReasoningChain) -> Self {
        Prediction {
            instance_id: instance_id.into(),
            probability,
            label: label_for(probability),
            chain,
        }
    }
}

/// Retrieved background snippet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSnippet {
    pub title: String,
    pub snippet: String,
    pub source_url: String,
}

/// Why the refinement loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    /// No active agent remains ambivalent.
    Consistent,
    /// The controller judged that no expansion is needed.
    ControllerStop,
    /// No inactive agents remain.
    PoolExhausted,
    /// The refinement cap was reached.
    IterationCap,
    /// The evolving loop is disabled.
    StaticAnalysis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EngineEvent {
    SearchInvoked {
        keywords: Vec<String>,
        snippets: Vec<EvidenceSnippet>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    },
    Instantiated {
        roles: Vec<AgentRole>,
        /// Set when the controller's selection was empty or unusable.
        fallback: bool,
        outputs: Vec<AgentOutput>,
    },
    Refined {
        role: AgentRole,
        before: AgentOutput,
        after: AgentOutput,
    },
    ExpansionChecked {
        verdict: bool,
        reason: String,
        fallback: bool,
    },
    Expanded {
        role: AgentRole,
        output: AgentOutput,
    },
    /// A parse failure was absorbed by a documented fallback.
    Fallback {
        stage: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        role: Option<AgentRole>,
        detail: String,
    },
    Terminated {
        reason: TerminationReason,
    },
    Summarized {
        chain: ReasoningChain,
    },
}

/// Digest pair for one backend exchange.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendCallRecord {
    pub stage: String,
    pub prompt_digest: String,
    pub response_digest: String,
    pub cached: bool,
}

/// Complete audit log of one instance's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineTranscript {
    pub instance_id: String,
    pub events: Vec<EngineEvent>,
    pub backend_calls: Vec<BackendCallRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl EngineTranscript {
    pub fn new(instance_id: impl Into<String>) -> Self {
        EngineTranscript {
            instance_id: instance_id.into(),
            events: Vec::new(),
            backend_calls: Vec::new(),
            failure: None,
        }
    }

    pub fn refinements(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, EngineEvent::Refined { .. }))
            .count()
    }

    pub fn expansions(&self) -> usize {
        self.events
            .iter()
            .filter(|e| matches!(e, EngineEvent::Expanded { .. }))
            .count()
    }

    pub fn initial_team(&self) -> Option<&[AgentRole]> {
        self.events.iter().find_map(|e| match e {
            EngineEvent::Instantiated { roles, .. } => Some(roles.as_slice()),
            _ => None,
        })
    }

    pub fn termination(&self) -> Option<TerminationReason> {
        self.events.iter().find_map(|e| match e {
            EngineEvent::Terminated { reason } => Some(*reason),
            _ => None,
        })
    }

    /// The chain from the final `Summarized` event.
    pub fn chain(&self) -> Option<&ReasoningChain> {
        self.events.iter().rev().find_map(|e| match e {
            EngineEvent::Summarized { chain } => Some(chain),
            _ => None,
        })
    }

    /// Sequence of active sets after instantiation and after each expansion.
    pub fn team_history(&self) -> Vec<Vec<AgentRole>> {
        let mut history = Vec::new();
        let mut current: Vec<AgentRole> = Vec::new();
        for e in &self.events {
            match e {
                EngineEvent::Instantiated { roles, .. } => {
                    current = roles.clone();
                    history.push(current.clone());
                }
                EngineEvent::Expanded { role, .. } => {
                    current.push(*role);
                    current.sort();
                    history.push(current.clone());
                }
                _ => {}
            }
        }
        history
    }

    /// True when, ignoring fallback notes, the event list ends with exactly
    /// one `Terminated` followed by exactly one `Summarized`.
    pub fn is_well_formed(&self) -> bool {
        let core: Vec<&EngineEvent> = self
            .events
            .iter()
            .filter(|e| !matches!(e, EngineEvent::Fallback { .. }))
            .collect();
        let count = |f: fn(&EngineEvent) -> bool| core.iter().filter(|e| f(e)).count();
        let n = core.len();
        n >= 2
            && count(|e| matches!(e, EngineEvent::Terminated { .. })) == 1
            && count(|e| matches!(e, EngineEvent::Summarized { .. })) == 1
            && matches!(core[n - 2], EngineEvent::Terminated { .. })
            && matches!(core[n - 1], EngineEvent::Summarized { .. })
    }

    /// Every role referenced by any event or chain section.
    pub fn mentioned_roles(&self) -> Vec<AgentRole> {
        let mut roles = Vec::new();
        for e in &self.events {
            match e {
                EngineEvent::Instantiated { roles: r, outputs, .. } => {
                    roles.extend(r.iter().copied());
                    roles.extend(outputs.iter().map(|o| o.role));
                }
                EngineEvent::Refined { role, .. } | EngineEvent::Expanded { role, .. } => roles.push(*role),
                EngineEvent::Fallback { role: Some(r), .. } => roles.push(*r),
                EngineEvent::Summarized { chain } => roles.extend(chain.sections().iter().map(|s| s.role)),
                _ => {}
            }
        }
        roles.sort();
        roles.dedup();
        roles
    }
}
