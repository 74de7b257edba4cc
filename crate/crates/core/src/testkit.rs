//! Deterministic generators for tests, benches and demo fixtures: a
//! linearly separable corpus of canonical chains and randomized scripted
//! controller scenarios.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backend::{MockRule, MockScript, Stage};
use crate::dataset::RationaleRecord;
use crate::engine::EngineConfig;
use crate::types::{AgentRole, ChainSection, DatasetInstance, ReasoningChain};

const SARCASTIC_WORDS: &[&str] = &[
    "mocking", "exaggerated", "ironic", "feigned", "contradiction", "hyperbole", "eyeroll", "scornful",
    "backhanded", "overstated", "incongruous", "deadpan",
];
const LITERAL_WORDS: &[&str] = &[
    "sincere", "factual", "straightforward", "neutral", "earnest", "descriptive", "measured", "plain",
    "consistent", "candid", "informative", "direct",
];
const SHARED_WORDS: &[&str] = &["the", "speaker", "tone", "context", "suggests", "cue", "agent", "text"];

fn phrase(rng: &mut ChaCha8Rng, vocab: &[&str], len: usize) -> String {
    let mut words = Vec::with_capacity(len);
    for k in 0..len {
        let pool = if k % 3 == 2 { SHARED_WORDS } else { vocab };
        words.push(*pool.choose(rng).expect("non-empty vocabulary"));
    }
    words.join(" ")
}

/// `n` chains with alternating labels. Label-bearing words come from two
/// disjoint vocabularies; roles and intensities are drawn independently of
/// the label, so only the wording separates the classes.
pub fn separable_corpus(n: usize, seed: u64) -> Vec<RationaleRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let label = (k % 2 == 0) as u8;
            let vocab = if label == 1 { SARCASTIC_WORDS } else { LITERAL_WORDS };
            let mut roles: Vec<AgentRole> = AgentRole::ALL.to_vec();
            roles.shuffle(&mut rng);
            roles.truncate(rng.random_range(1..=AgentRole::ALL.len()));
            roles.sort();
            let sections = roles
                .into_iter()
                .map(|role| {
                    let len = rng.random_range(4..10);
                    ChainSection {
                        role,
                        intensity: f64::from(rng.random_range(0u32..=100)) / 100.0,
                        explanation: phrase(&mut rng, vocab, len),
                    }
                })
                .collect();
            let len = rng.random_range(5..12);
            let chain = ReasoningChain::new(sections, phrase(&mut rng, vocab, len)).expect("generated chain is valid");
            RationaleRecord {
                chain_text: chain.canonical_text().to_string(),
                label,
            }
        })
        .collect()
}

/// One randomized scripted run: an instance, the engine configuration and
/// the backend script that drives it.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub instance: DatasetInstance,
    pub config: EngineConfig,
    pub script: MockScript,
}

fn random_intensity(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..10) {
        0 | 1 => 0.5,
        2 | 3 => [0.35, 0.45, 0.55, 0.65][rng.random_range(0..4)],
        _ => f64::from(rng.random_range(0u32..=100)) / 100.0,
    }
}

fn agent_reply(rng: &mut ChaCha8Rng, role: AgentRole, revision: u32) -> String {
    if rng.random_range(0..20) == 0 {
        return "I would rather not say.".into();
    }
    let sigma = random_intensity(rng);
    format!(r#"{{"intensity": {sigma}, "explanation": "{} view, revision {revision}"}}"#, role.id())
}

/// Builds a scenario from `seed`: random pool restrictions, team selection,
/// intensity sequences, expansion verdicts and complement picks, with
/// occasional malformed replies to exercise every fallback.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = EngineConfig {
        max_iterations: rng.random_range(1..=12),
        enable_web_search: rng.random_bool(0.3),
        ..EngineConfig::default()
    };
    for role in AgentRole::ALL {
        if rng.random_bool(0.15) {
            config.disabled_roles.insert(role);
        }
    }
    if config.pool().is_empty() {
        config.disabled_roles.remove(&AgentRole::ALL[rng.random_range(0..AgentRole::ALL.len())]);
    }
    let pool = config.pool();

    let mut script = MockScript::new();
    script = script.rule(MockRule::new(r#"{"need": false}"#).stage(Stage::WebSearch));

    let team_reply = match rng.random_range(0..10) {
        0 => "no particular team".to_string(),
        1 => r#"{"roles": []}"#.to_string(),
        _ => {
            let mut team = AgentRole::ALL.to_vec();
            team.shuffle(&mut rng);
            team.truncate(rng.random_range(1..=AgentRole::ALL.len()));
            let ids: Vec<String> = team.iter().map(|r| format!("\"{}\"", r.id())).collect();
            format!(r#"{{"roles": [{}]}}"#, ids.join(", "))
        }
    };
    script = script.rule(MockRule::new(team_reply).stage(Stage::SelectTeam));

    for role in AgentRole::ALL {
        let reply = agent_reply(&mut rng, role, 0);
        script = script.rule(MockRule::new(reply).stage(Stage::Initial).role(role));
        for revision in 1..=config.max_iterations {
            let reply = agent_reply(&mut rng, role, revision);
            script = script.rule(MockRule::new(reply).stage(Stage::Refine).role(role).round(revision));
        }
    }

    for round in 1..=config.max_iterations {
        let verdict = match rng.random_range(0..10) {
            0 => "maybe".to_string(),
            1..=6 => r#"{"verdict": "expand", "reason": "gap"}"#.to_string(),
            _ => r#"{"verdict": "stop", "reason": "enough"}"#.to_string(),
        };
        script = script.rule(MockRule::new(verdict).stage(Stage::ExpansionCheck).round(round));
        let pick = if rng.random_range(0..8) == 0 {
            "nobody".to_string()
        } else {
            format!(r#"{{"role": "{}"}}"#, pool[rng.random_range(0..pool.len())].id())
        };
        script = script.rule(MockRule::new(pick).stage(Stage::Complement).round(round));
    }

    let summary = if rng.random_bool(0.1) { "..." } else { r#"{"summary": "team synthesis"}"# };
    script = script.rule(MockRule::new(summary).stage(Stage::Summarize));

    Scenario {
        instance: DatasetInstance::new(format!("scenario-{seed}"), "Oh great, the build broke again.", (seed % 2) as i64)
            .expect("valid instance"),
        config,
        script,
    }
}
