//! Support agents: the web search agent that gathers background evidence
//! before analysis, and the summarization agent that turns the final team
//! state into a reasoning chain.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::backend::parse::{first_json_object, required_str};
use crate::backend::{BackendError, CallContext, ParseError, Stage};
use crate::net::{http_agent, join_url, TransportCounter};
use crate::types::{AgentTeamState, ChainSection, EvidenceSnippet, ReasoningChain};

pub const MAX_KEYWORDS: usize = 2;
pub const MAX_KEYWORD_WORDS: usize = 5;
pub const MAX_SNIPPETS: usize = 3;

/// One or two short search keywords.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordQuery {
    keywords: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeywordError {
    #[error("a query needs 1 to {MAX_KEYWORDS} keywords, got {0}")]
    Count(usize),
    #[error("keyword `{0}` is empty or longer than {MAX_KEYWORD_WORDS} words")]
    Keyword(String),
}

fn keyword_ok(k: &str) -> bool {
    let words = k.split_whitespace().count();
    (1..=MAX_KEYWORD_WORDS).contains(&words)
}

impl KeywordQuery {
    pub fn new(keywords: Vec<String>) -> Result<Self, KeywordError> {
        if !(1..=MAX_KEYWORDS).contains(&keywords.len()) {
            return Err(KeywordError::Count(keywords.len()));
        }
        if let Some(bad) = keywords.iter().find(|k| !keyword_ok(k)) {
            return Err(KeywordError::Keyword(bad.clone()));
        }
        Ok(KeywordQuery {
            keywords: keywords.into_iter().map(|k| k.trim().to_string()).collect(),
        })
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn joined(&self) -> String {
        self.keywords.join(" ")
    }
}

pub const SEARCH_DECISION_SYSTEM: &str = "You are the Controller Agent of a sarcasm analysis team. \
Decide whether understanding the text requires external background knowledge (for example about \
people, events, products or facts it refers to). Respond with exactly one JSON object and nothing else.";

pub const SEARCH_DECISION_SCHEMA: &str =
    r#"{"need": <true|false>, "keywords": ["<one or two concise search keywords, only when need is true>"]}"#;

pub fn search_decision_prompt(text: &str) -> String {
    format!(
        "Text:\n\"\"\"\n{text}\n\"\"\"\n\nDoes analyzing this text for sarcasm require external background \
         knowledge? If yes, give one or two concise search keywords (each at most {MAX_KEYWORD_WORDS} words).\n\
         Reply as: {SEARCH_DECISION_SCHEMA}"
    )
}

/// Parses the controller's search decision. `Ok(None)` means no search is
/// needed; extra keywords beyond the first two are dropped.
pub fn parse_search_decision(raw: &str) -> Result<Option<KeywordQuery>, ParseError> {
    let obj = first_json_object(raw).ok_or(ParseError::NoObject)?;
    let need = match obj.get("need") {
        Some(Value::Bool(b)) => *b,
        None | Some(Value::Null) => return Err(ParseError::MissingField("need")),
        Some(other) => {
            return Err(ParseError::InvalidField {
                field: "need",
                reason: format!("expected boolean, got {other}"),
            })
        }
    };
    if !need {
        return Ok(None);
    }
    let list = match obj.get("keywords") {
        Some(Value::Array(items)) => items,
        None | Some(Value::Null) => return Err(ParseError::MissingField("keywords")),
        Some(other) => {
            return Err(ParseError::InvalidField {
                field: "keywords",
                reason: format!("expected array, got {other}"),
            })
        }
    };
    let keywords: Vec<String> = list
        .iter()
        .filter_map(Value::as_str)
        .map(str::trim)
        .filter(|k| keyword_ok(k))
        .take(MAX_KEYWORDS)
        .map(str::to_string)
        .collect();
    KeywordQuery::new(keywords).map(Some).map_err(|e| ParseError::InvalidField {
        field: "keywords",
        reason: e.to_string(),
    })
}

/// Asks the controller whether external context is needed and, if so, for
/// keywords. Unparseable decisions mean no search.
pub fn decide_and_extract(ctx: &mut CallContext<'_>, text: &str) -> Result<Option<KeywordQuery>, BackendError> {
    let res = ctx.structured(
        Stage::WebSearch,
        None,
        0,
        SEARCH_DECISION_SYSTEM,
        &search_decision_prompt(text),
        SEARCH_DECISION_SCHEMA,
        parse_search_decision,
    )?;
    Ok(match res.value {
        Ok(query) => query,
        Err(err) => {
            ctx.note_fallback(Stage::WebSearch, None, format!("search skipped: {err}"));
            None
        }
    })
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("search provider unavailable: {0}")]
    Unavailable(String),
}

/// Wire shape of one search hit, shared by fixtures and the HTTP provider.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub snippet: String,
    pub url: String,
}

impl From<SearchHit> for EvidenceSnippet {
    fn from(h: SearchHit) -> Self {
        EvidenceSnippet {
            title: h.title,
            snippet: h.snippet,
            source_url: h.url,
        }
    }
}

fn top_snippets(hits: impl IntoIterator<Item = SearchHit>) -> Vec<EvidenceSnippet> {
    hits.into_iter()
        .filter(|h| !h.snippet.trim().is_empty())
        .take(MAX_SNIPPETS)
        .map(EvidenceSnippet::from)
        .collect()
}

pub trait SearchProvider: Send + Sync {
    /// At most three snippets in provider rank order.
    fn search(&self, query: &KeywordQuery) -> Result<Vec<EvidenceSnippet>, SearchError>;

    fn network_operations(&self) -> u64 {
        0
    }
}

/// Lowercase, alphanumeric runs joined by `-`.
pub fn keyword_slug(keyword: &str) -> String {
    keyword
        .split(|c: char| !c.is_alphanumeric())
        .filter(|p| !p.is_empty())
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

/// Offline provider answering from fixtures keyed by keyword slug.
#[derive(Debug, Clone, Default)]
pub struct StubSearch {
    fixtures: BTreeMap<String, Vec<SearchHit>>,
}

impl StubSearch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fixture(mut self, keyword: &str, hits: Vec<SearchHit>) -> Self {
        self.fixtures.insert(keyword_slug(keyword), hits);
        self
    }

    /// Reads every `<slug>.json` (an array of `{title, snippet, url}`) in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, SearchError> {
        let mut stub = StubSearch::new();
        let entries = fs::read_dir(dir).map_err(|e| SearchError::Unavailable(format!("{}: {e}", dir.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| SearchError::Unavailable(e.to_string()))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let Some(slug) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            let text = fs::read_to_string(&path).map_err(|e| SearchError::Unavailable(format!("{}: {e}", path.display())))?;
            let hits: Vec<SearchHit> =
                serde_json::from_str(&text).map_err(|e| SearchError::Unavailable(format!("{}: {e}", path.display())))?;
            stub.fixtures.insert(slug.to_string(), hits);
        }
        Ok(stub)
    }
}

impl SearchProvider for StubSearch {
    fn search(&self, query: &KeywordQuery) -> Result<Vec<EvidenceSnippet>, SearchError> {
        let mut hits: Vec<SearchHit> = Vec::new();
        for k in query.keywords() {
            for hit in self.fixtures.get(&keyword_slug(k)).into_iter().flatten() {
                if !hits.iter().any(|h| h.url == hit.url && h.snippet == hit.snippet) {
                    hits.push(hit.clone());
                }
            }
        }
        Ok(top_snippets(hits))
    }
}

/// `GET {base}/search?q=<keywords>&limit=3` returning `[{title, snippet, url}]`.
pub struct HttpSearch {
    base_url: String,
    agent: ureq::Agent,
    counter: TransportCounter,
}

impl HttpSearch {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        HttpSearch {
            base_url: base_url.into(),
            agent: http_agent(timeout),
            counter: TransportCounter::new(),
        }
    }
}

impl SearchProvider for HttpSearch {
    fn search(&self, query: &KeywordQuery) -> Result<Vec<EvidenceSnippet>, SearchError> {
        self.counter.record();
        let mut resp = self
            .agent
            .get(&join_url(&self.base_url, "search"))
            .query("q", query.joined())
            .query("limit", MAX_SNIPPETS.to_string())
            .call()
            .map_err(|e| SearchError::Unavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(SearchError::Unavailable(format!("HTTP {status}")));
        }
        let hits: Vec<SearchHit> = resp
            .body_mut()
            .read_json()
            .map_err(|e| SearchError::Unavailable(format!("invalid response: {e}")))?;
        Ok(top_snippets(hits))
    }

    fn network_operations(&self) -> u64 {
        self.counter.get()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SearchProviderConfig {
    Stub {
        #[serde(default)]
        fixtures_dir: Option<PathBuf>,
    },
    Http {
        base_url: String,
        #[serde(default = "default_search_timeout")]
        timeout_secs: u64,
    },
}

fn default_search_timeout() -> u64 {
    10
}

impl Default for SearchProviderConfig {
    fn default() -> Self {
        SearchProviderConfig::Stub { fixtures_dir: None }
    }
}

pub fn build_search(config: &SearchProviderConfig) -> Result<Box<dyn SearchProvider>, SearchError> {
    Ok(match config {
        SearchProviderConfig::Stub { fixtures_dir: None } => Box::new(StubSearch::new()),
        SearchProviderConfig::Stub { fixtures_dir: Some(dir) } => Box::new(StubSearch::load_dir(dir)?),
        SearchProviderConfig::Http { base_url, timeout_secs } => {
            Box::new(HttpSearch::new(base_url.clone(), Duration::from_secs(*timeout_secs)))
        }
    })
}

pub const SUMMARY_SYSTEM: &str = "You are the Summarization Agent of a sarcasm analysis team. \
Synthesize the agents' final analyses into one coherent reasoning chain that states which cues point \
towards or away from sarcasm and how strongly. Respond with exactly one JSON object and nothing else.";

pub const SUMMARY_SCHEMA: &str = r#"{"summary": "<coherent synthesis of the agents' analyses>"}"#;

pub fn summary_prompt(state: &AgentTeamState, text: &str) -> String {
    let analyses = state
        .outputs()
        .map(|o| format!("- {} ({}), intensity {:.2}: {}", o.role.id(), o.role.display_name(), o.intensity, o.explanation))
        .collect::<Vec<_>>()
        .join("\n");
    format!("Text:\n\"\"\"\n{text}\n\"\"\"\n\nFinal agent analyses:\n{analyses}\n\nReply as: {SUMMARY_SCHEMA}")
}

pub fn parse_summary(raw: &str) -> Result<String, ParseError> {
    let obj = first_json_object(raw).ok_or(ParseError::NoObject)?;
    required_str(&obj, "summary").map(str::to_string)
}

/// Deterministic summary used when the summarization reply is unusable.
pub fn fallback_summary(sections: &[ChainSection]) -> String {
    let parts: Vec<String> = sections
        .iter()
        .map(|s| format!("{}({:.2}): {}", s.role.id(), s.intensity, s.explanation))
        .collect();
    format!("Agents reported: {}", parts.join("; "))
}

/// Builds the reasoning chain: sections are the final outputs verbatim, the
/// summary comes from one backend call.
pub fn summarize(ctx: &mut CallContext<'_>, state: &AgentTeamState, text: &str) -> Result<ReasoningChain, BackendError> {
    let sections: Vec<ChainSection> = state.outputs().map(ChainSection::from).collect();
    let res = ctx.structured(
        Stage::Summarize,
        None,
        0,
        SUMMARY_SYSTEM,
        &summary_prompt(state, text),
        SUMMARY_SCHEMA,
        parse_summary,
    )?;
    let summary = match res.value {
        Ok(s) => s,
        Err(err) => {
            ctx.note_fallback(Stage::Summarize, None, format!("template summary used: {err}"));
            fallback_summary(&sections)
        }
    };
    Ok(ReasoningChain::new(sections, summary).expect("team outputs are validated and canonically ordered"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MockBackend, MockRule, MockScript};
    use crate::types::{AgentOutput, AgentRole};

    fn hits(n: usize, prefix: &str) -> Vec<SearchHit> {
        (0..n)
            .map(|i| SearchHit {
                title: format!("{prefix} {i}"),
                snippet: format!("{prefix} snippet {i}"),
                url: format!("http://example.org/{prefix}/{i}"),
            })
            .collect()
    }

    #[test]
    fn decision_not_needed() {
        assert_eq!(parse_search_decision(r#"{"need": false}"#), Ok(None));
    }

    #[test]
    fn decision_with_two_keywords() {
        let q = parse_search_decision(r#"{"need": true, "keywords": ["Newton", "empirical evidence"]}"#)
            .unwrap()
            .unwrap();
        assert_eq!(q.keywords(), ["Newton", "empirical evidence"]);
    }

    #[test]
    fn decision_truncates_extra_keywords() {
        let q = parse_search_decision(r#"{"need": true, "keywords": ["a","b","c"]}"#).unwrap().unwrap();
        assert_eq!(q.keywords(), ["a", "b"]);
    }

    #[test]
    fn decision_drops_invalid_keywords() {
        let q = parse_search_decision(r#"{"need": true, "keywords": ["", "one two three four five six", "ok"]}"#)
            .unwrap()
            .unwrap();
        assert_eq!(q.keywords(), ["ok"]);
        assert!(parse_search_decision(r#"{"need": true, "keywords": []}"#).is_err());
        assert!(parse_search_decision(r#"{"need": "yes"}"#).is_err());
    }

    #[test]
    fn keyword_query_bounds() {
        assert!(KeywordQuery::new(vec![]).is_err());
        assert!(KeywordQuery::new(vec!["a".into(), "b".into(), "c".into()]).is_err());
        assert!(KeywordQuery::new(vec!["a b c d e".into()]).is_ok());
        assert!(KeywordQuery::new(vec!["a b c d e f".into()]).is_err());
    }

    #[test]
    fn unparseable_decision_is_fail_closed() {
        let backend = MockBackend::new(MockScript::new().with_default("maybe?"));
        let mut ctx = CallContext::new(&backend, "i");
        assert_eq!(decide_and_extract(&mut ctx, "text").unwrap(), None);
        assert_eq!(ctx.take_fallbacks().len(), 1);
    }

    #[test]
    fn stub_returns_top_three() {
        let stub = StubSearch::new().with_fixture("Newton", hits(5, "newton"));
        let q = KeywordQuery::new(vec!["Newton".into()]).unwrap();
        let out = stub.search(&q).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].title, "newton 0");
        assert_eq!(out[2].title, "newton 2");
    }

    #[test]
    fn stub_miss_is_empty() {
        let stub = StubSearch::new().with_fixture("Newton", hits(2, "n"));
        let q = KeywordQuery::new(vec!["Einstein".into()]).unwrap();
        assert!(stub.search(&q).unwrap().is_empty());
    }

    #[test]
    fn stub_merges_keywords_in_order() {
        let stub = StubSearch::new()
            .with_fixture("a", hits(2, "a"))
            .with_fixture("b", hits(2, "b"));
        let q = KeywordQuery::new(vec!["a".into(), "b".into()]).unwrap();
        let titles: Vec<_> = stub.search(&q).unwrap().into_iter().map(|s| s.title).collect();
        assert_eq!(titles, ["a 0", "a 1", "b 0"]);
    }

    #[test]
    fn stub_loads_fixture_dir() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("empirical-evidence.json"), serde_json::to_string(&hits(4, "e")).unwrap()).unwrap();
        fs::write(dir.path().join("README.txt"), "ignored").unwrap();
        let stub = StubSearch::load_dir(dir.path()).unwrap();
        let q = KeywordQuery::new(vec!["Empirical Evidence".into()]).unwrap();
        assert_eq!(stub.search(&q).unwrap().len(), 3);
    }

    #[test]
    fn slugs() {
        assert_eq!(keyword_slug("Empirical  Evidence!"), "empirical-evidence");
        assert_eq!(keyword_slug("Newton"), "newton");
    }

    fn state(outputs: &[(AgentRole, f64, &str)]) -> AgentTeamState {
        AgentTeamState::new(
            AgentRole::ALL,
            outputs.iter().map(|&(r, i, e)| AgentOutput::new(r, i, e, 0).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn summarize_with_scripted_summary() {
        let backend = MockBackend::new(
            MockScript::new().rule(MockRule::new(r#"{"summary": "predominantly indicates sarcasm"}"#).stage(Stage::Summarize)),
        );
        let mut ctx = CallContext::new(&backend, "i");
        let st = state(&[(AgentRole::Rda, 0.9, "hyperbole"), (AgentRole::Sia, 0.8, "incongruity")]);
        let chain = summarize(&mut ctx, &st, "t").unwrap();
        assert_eq!(chain.sections().len(), 2);
        assert_eq!(chain.sections()[0].role, AgentRole::Sia);
        assert_eq!(chain.sections()[1].role, AgentRole::Rda);
        assert_eq!(chain.summary(), "predominantly indicates sarcasm");
        assert!(chain.canonical_text().find("[SIA").unwrap() < chain.canonical_text().find("[RDA").unwrap());
    }

    #[test]
    fn summarize_falls_back_to_template() {
        let backend = MockBackend::new(MockScript::new().with_default("no json"));
        let mut ctx = CallContext::new(&backend, "i");
        let st = state(&[(AgentRole::Sia, 0.8, "a"), (AgentRole::Pca, 0.2, "b")]);
        let chain = summarize(&mut ctx, &st, "t").unwrap();
        assert_eq!(chain.summary(), "Agents reported: SIA(0.80): a; PCA(0.20): b");
        assert_eq!(ctx.take_fallbacks().len(), 1);
    }

    #[test]
    fn sections_are_verbatim() {
        let backend = MockBackend::new(MockScript::new().with_default(r#"{"summary": "s"}"#));
        let mut ctx = CallContext::new(&backend, "i");
        let st = state(&[(AgentRole::Epia, 0.123456, "exact text\nwith lines")]);
        let chain = summarize(&mut ctx, &st, "t").unwrap();
        let o = st.output(AgentRole::Epia).unwrap();
        assert_eq!(chain.sections()[0], ChainSection::from(o));
    }
}
