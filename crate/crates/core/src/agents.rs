//! The six core analysis agents: prompt templates and the two analysis
//! operations (initial analysis and peer-conditioned refinement).
//!
//! Templates use `{name}` placeholders. Only lowercase identifiers count as
//! placeholders, so JSON examples such as `{"intensity": 0.5}` pass through
//! untouched.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::backend::{parse_agent_output, BackendError, CallContext, Stage};
use crate::types::{AgentOutput, AgentRole, EvidenceSnippet};

pub const AGENT_OUTPUT_SCHEMA: &str = r#"{"intensity": <number between 0 and 1>, "explanation": "<concise explanation of the cues behind the score>"}"#;

const INITIAL_PLACEHOLDERS: &[&str] = &["text", "evidence"];
const REFINE_PLACEHOLDERS: &[&str] = &["text", "evidence", "own_prior", "peer_outputs"];

pub const NO_PEERS_MARKER: &str = "(no peer analyses available)";

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("{role} {kind} template: unknown placeholder {{{name}}}")]
    UnknownPlaceholder { role: AgentRole, kind: &'static str, name: String },
    #[error("{role} {kind} template: missing required placeholder {{{name}}}")]
    MissingPlaceholder { role: AgentRole, kind: &'static str, name: &'static str },
    #[error("{role} {kind} template does not contain the role's charter verbatim")]
    MissingCharter { role: AgentRole, kind: &'static str },
    #[error("{role} {kind} template contains the charter of {other}")]
    ForeignCharter { role: AgentRole, kind: &'static str, other: AgentRole },
    #[error("cannot read template {path}: {source}")]
    Io { path: String, source: io::Error },
}

/// Yields `(start, end, name)` for every `{ident}` with a lowercase
/// identifier.
fn placeholders(template: &str) -> impl Iterator<Item = (usize, usize, &str)> {
    let bytes = template.as_bytes();
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < bytes.len() {
            if bytes[i] == b'{' {
                let start = i;
                let mut j = i + 1;
                while j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                    j += 1;
                }
                if j > start + 1 && j < bytes.len() && bytes[j] == b'}' {
                    i = j + 1;
                    return Some((start, j + 1, &template[start + 1..j]));
                }
            }
            i += 1;
        }
        None
    })
}

/// Single-pass substitution; substituted values are never re-expanded.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut last = 0;
    for (start, end, name) in placeholders(template) {
        if let Some((_, v)) = values.iter().find(|(k, _)| *k == name) {
            out.push_str(&template[last..start]);
            out.push_str(v);
            last = end;
        }
    }
    out.push_str(&template[last..]);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub role: AgentRole,
    pub initial_template: String,
    pub refine_template: String,
}

impl PromptTemplate {
    pub fn builtin(role: AgentRole) -> Self {
        let charter = role.analytical_charter();
        PromptTemplate {
            role,
            initial_template: format!(
                "Analytical charter: {charter}\n\n\
                 {{evidence}}Text to analyze:\n\"\"\"\n{{text}}\n\"\"\"\n\n\
                 Assess the text strictly from the perspective of your charter. Rate the strength of the \
                 sarcastic signal you find as an intensity between 0 (no sarcasm) and 1 (unmistakable \
                 sarcasm), and explain the specific cues behind the rating."
            ),
            refine_template: format!(
                "Analytical charter: {charter}\n\n\
                 {{evidence}}Text to analyze:\n\"\"\"\n{{text}}\n\"\"\"\n\n\
                 Your previous analysis:\n{{own_prior}}\n\n\
                 Analyses from the other agents on the team:\n{{peer_outputs}}\n\n\
                 Your previous score was the least decisive on the team. Re-examine the text from the \
                 perspective of your charter, weigh the other agents' conclusions, and refine your \
                 analysis. Commit to a clearer score where the evidence allows it."
            ),
        }
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let role = self.role;
        for (kind, template, allowed, required) in [
            ("initial", &self.initial_template, INITIAL_PLACEHOLDERS, &["text"][..]),
            ("refine", &self.refine_template, REFINE_PLACEHOLDERS, &["text", "own_prior", "peer_outputs"][..]),
        ] {
            for (_, _, name) in placeholders(template) {
                if !allowed.contains(&name) {
                    return Err(TemplateError::UnknownPlaceholder {
                        role,
                        kind,
                        name: name.to_string(),
                    });
                }
            }
            for &name in required {
                if !placeholders(template).any(|(_, _, n)| n == name) {
                    return Err(TemplateError::MissingPlaceholder { role, kind, name });
                }
            }
            if !template.contains(role.analytical_charter()) {
                return Err(TemplateError::MissingCharter { role, kind });
            }
            if let Some(other) = AgentRole::ALL
                .into_iter()
                .find(|&o| o != role && template.contains(o.analytical_charter()))
            {
                return Err(TemplateError::ForeignCharter { role, kind, other });
            }
        }
        Ok(())
    }
}

/// Templates for every role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    templates: BTreeMap<AgentRole, PromptTemplate>,
}

impl Default for PromptSet {
    fn default() -> Self {
        PromptSet {
            templates: AgentRole::ALL.into_iter().map(|r| (r, PromptTemplate::builtin(r))).collect(),
        }
    }
}

impl PromptSet {
    /// Loads `<ID>.initial.txt` / `<ID>.refine.txt` overrides from `dir`;
    /// files that are absent keep the built-in text.
    pub fn load_dir(dir: &Path) -> Result<Self, TemplateError> {
        let mut set = PromptSet::default();
        for role in AgentRole::ALL {
            let template = set.templates.get_mut(&role).expect("built-in set covers all roles");
            for (suffix, slot) in [
                ("initial", &mut template.initial_template),
                ("refine", &mut template.refine_template),
            ] {
                let path = dir.join(format!("{}.{suffix}.txt", role.id()));
                match fs::read_to_string(&path) {
                    Ok(text) => *slot = text,
                    Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                    Err(source) => {
                        return Err(TemplateError::Io {
                            path: path.display().to_string(),
                            source,
                        })
                    }
                }
            }
            template.validate()?;
        }
        Ok(set)
    }

    pub fn get(&self, role: AgentRole) -> &PromptTemplate {
        &self.templates[&role]
    }

    /// Writes the set to `dir` in the layout read by [`PromptSet::load_dir`].
    pub fn write_dir(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        for t in self.templates.values() {
            fs::write(dir.join(format!("{}.initial.txt", t.role.id())), &t.initial_template)?;
            fs::write(dir.join(format!("{}.refine.txt", t.role.id())), &t.refine_template)?;
        }
        Ok(())
    }
}

pub fn system_prompt(role: AgentRole) -> String {
    format!(
        "You are the {} on a team of agents that analyze texts for sarcasm. \
         Respond with exactly one JSON object and nothing else, of the form:\n{AGENT_OUTPUT_SCHEMA}",
        role.display_name()
    )
}

/// The evidence block; empty when there is no evidence.
pub fn evidence_block(evidence: &[EvidenceSnippet]) -> String {
    if evidence.is_empty() {
        return String::new();
    }
    let mut out = String::from("Background evidence retrieved for this text:\n");
    for (i, e) in evidence.iter().enumerate() {
        out.push_str(&format!("{}. {}: {} ({})\n", i + 1, e.title, e.snippet, e.source_url));
    }
    out.push('\n');
    out
}

fn describe(output: &AgentOutput) -> String {
    format!("intensity {:.2}: {}", output.intensity, output.explanation)
}

/// Peers as a labelled list in canonical order.
pub fn peer_block(peers: &[&AgentOutput]) -> String {
    if peers.is_empty() {
        return NO_PEERS_MARKER.to_string();
    }
    let mut sorted = peers.to_vec();
    sorted.sort_by_key(|o| o.role);
    sorted
        .iter()
        .map(|o| format!("- {} ({}), {}", o.role.id(), o.role.display_name(), describe(o)))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Default)]
pub struct AgentPool {
    prompts: PromptSet,
}

impl AgentPool {
    pub fn new(prompts: PromptSet) -> Self {
        AgentPool { prompts }
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    pub fn initial_prompt(&self, role: AgentRole, text: &str, evidence: &[EvidenceSnippet]) -> String {
        let evidence = evidence_block(evidence);
        fill(
            &self.prompts.get(role).initial_template,
            &[("text", text), ("evidence", &evidence)],
        )
    }

    pub fn refine_prompt(&self, prior: &AgentOutput, peers: &[&AgentOutput], text: &str, evidence: &[EvidenceSnippet]) -> String {
        let evidence = evidence_block(evidence);
        let own = describe(prior);
        let peers = peer_block(peers);
        fill(
            &self.prompts.get(prior.role).refine_template,
            &[("text", text), ("evidence", &evidence), ("own_prior", &own), ("peer_outputs", &peers)],
        )
    }

    /// First analysis of `text` by `role` (revision 0).
    pub fn initial_analysis(
        &self,
        ctx: &mut CallContext<'_>,
        role: AgentRole,
        text: &str,
        evidence: &[EvidenceSnippet],
    ) -> Result<AgentOutput, BackendError> {
        let user = self.initial_prompt(role, text, evidence);
        self.analyze(ctx, Stage::Initial, role, 0, &user)
    }

    /// Re-analysis of `prior.role` conditioned on its peers' outputs. Any
    /// entry of `peers` belonging to the refined role itself is ignored.
    pub fn refine_analysis(
        &self,
        ctx: &mut CallContext<'_>,
        prior: &AgentOutput,
        peers: &[&AgentOutput],
        text: &str,
        evidence: &[EvidenceSnippet],
    ) -> Result<AgentOutput, BackendError> {
        let peers: Vec<&AgentOutput> = peers.iter().copied().filter(|p| p.role != prior.role).collect();
        let user = self.refine_prompt(prior, &peers, text, evidence);
        self.analyze(ctx, Stage::Refine, prior.role, prior.revision + 1, &user)
    }

    fn analyze(
        &self,
        ctx: &mut CallContext<'_>,
        stage: Stage,
        role: AgentRole,
        revision: u32,
        user: &str,
    ) -> Result<AgentOutput, BackendError> {
        let system = system_prompt(role);
        let result = ctx.structured(stage, Some(role), revision, &system, user, AGENT_OUTPUT_SCHEMA, |raw| {
            parse_agent_output(raw, role, revision)
        })?;
        Ok(match result.value {
            Ok(output) => output,
            Err(err) => {
                ctx.note_fallback(stage, Some(role), format!("sentinel output substituted: {err}"));
                AgentOutput::sentinel(role, revision)
            }
        })
    }
}
