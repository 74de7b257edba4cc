//! Acceptance suite: one PASS/FAIL line per headline criterion, with the
//! tolerances pinned below. Exits nonzero if any criterion fails.

mod common;

use std::collections::HashMap;
use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use sevade_core::adjudicator::{bce_loss, train_baseline, BaselineModel, RecordingAdjudicator, TrainerHyper, DEFAULT_BUCKETS};
use sevade_core::backend::MockBackend;
use sevade_core::dataset::load_jsonl;
use sevade_core::engine::find_ambivalent;
use sevade_core::metrics::{accuracy, macro_f1, ConfusionMatrix};
use sevade_core::pipeline::{run_instances, Components, Decider, InstanceOutcome};
use sevade_core::support::{HttpSearch, KeywordQuery, StubSearch, MAX_SNIPPETS};
use sevade_core::testkit::{random_scenario, separable_corpus};
use sevade_core::{
    AgentOutput, AgentPool, AgentRole, AgentTeamState, Engine, EngineConfig, EngineEvent, EngineTranscript, MockScript,
    ReasoningChain, TerminationReason,
};

use common::{fixture, read_lines, run_fixture, stderr, train_model};

const TERMINATION_SCENARIOS: u64 = 1000;
const TERMINATION_BUDGET: Duration = Duration::from_secs(30);
const AMBIVALENT_CASES: usize = 1000;
const METRIC_VECTORS: usize = 200;
const METRIC_TOL: f64 = 1e-12;
const BCE_TOL: f64 = 1e-12;
const GRADIENT_COORDS: usize = 20;
const GRADIENT_REL_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const HELD_OUT_MIN_ACCURACY: f64 = 0.95;

type Check = Result<String, String>;
type Criterion<'a> = (&'a str, Box<dyn Fn() -> Check + 'a>);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn termination() -> Check {
    let started = Instant::now();
    let mut caps = 0;
    for seed in 0..TERMINATION_SCENARIOS {
        let sc = random_scenario(seed);
        let engine = Engine::new(sc.config.clone(), AgentPool::default()).map_err(|e| e.to_string())?;
        let run = engine
            .run_instance(&MockBackend::new(sc.script.clone()), &StubSearch::new(), &sc.instance)
            .map_err(|e| format!("seed {seed}: {}", e.error))?;
        let t = &run.transcript;
        ensure!(t.is_well_formed(), "seed {seed}: malformed transcript");
        ensure!(t.refinements() <= sc.config.max_iterations as usize, "seed {seed}: {} refinements", t.refinements());
        let pool = sc.config.pool();
        let initial = t.initial_team().ok_or(format!("seed {seed}: no initial team"))?;
        ensure!(t.expansions() <= pool.len() - initial.len(), "seed {seed}: {} expansions", t.expansions());
        for pair in t.team_history().windows(2) {
            ensure!(
                pair[1].len() == pair[0].len() + 1 && pair[0].iter().all(|r| pair[1].contains(r)),
                "seed {seed}: team shrank or jumped"
            );
        }
        caps += usize::from(t.termination() == Some(TerminationReason::IterationCap));
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < TERMINATION_BUDGET, "took {elapsed:?}");
    Ok(format!("{TERMINATION_SCENARIOS} scenarios in {elapsed:.2?}, {caps} hit the iteration cap"))
}

/// Intensities are k/100 so distances compare as integers.
fn ambivalent_oracle(team: &[(AgentRole, u32)]) -> AgentRole {
    let dist = |k: u32| (k as i64 - 50).abs();
    let best = team.iter().map(|&(_, k)| dist(k)).min().unwrap();
    AgentRole::ALL
        .into_iter()
        .find(|r| team.iter().any(|&(t, k)| t == *r && dist(k) == best))
        .unwrap()
}

fn find_ambivalent_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut ties = 0;
    for case in 0..AMBIVALENT_CASES {
        let mut roles = AgentRole::ALL.to_vec();
        for i in (1..roles.len()).rev() {
            roles.swap(i, rng.random_range(0..=i));
        }
        roles.truncate(rng.random_range(1..=roles.len()));
        let pivot: u32 = rng.random_range(0..=50);
        let team: Vec<(AgentRole, u32)> = roles
            .into_iter()
            .map(|r| {
                let k = if case % 2 == 0 && rng.random_bool(0.6) {
                    if rng.random_bool(0.5) {
                        50 - pivot
                    } else {
                        50 + pivot
                    }
                } else {
                    rng.random_range(0..=100)
                };
                (r, k)
            })
            .collect();
        let best = team.iter().map(|&(_, k)| (k as i64 - 50).abs()).min().unwrap();
        ties += usize::from(team.iter().filter(|&&(_, k)| (k as i64 - 50).abs() == best).count() > 1);
        let outputs = team.iter().map(|&(r, k)| AgentOutput::new(r, f64::from(k) / 100.0, "x", 0).unwrap());
        let state = AgentTeamState::new(AgentRole::ALL, outputs).map_err(|e| e.to_string())?;
        let got = find_ambivalent(&state).map_err(|e| e.to_string())?;
        let want = ambivalent_oracle(&team);
        ensure!(got == want, "case {case}: {team:?} gave {got:?}, oracle {want:?}");
    }
    ensure!(ties >= 100, "only {ties} tied cases generated");
    Ok(format!("{AMBIVALENT_CASES} exact matches, {ties} with ties"))
}

fn brute_force_metrics(pred: &[u8], gold: &[u8]) -> (f64, f64) {
    let n = pred.len() as f64;
    let acc = pred.iter().zip(gold).filter(|(p, y)| p == y).count() as f64 / n;
    let f1 = |c: u8| {
        let tp = pred.iter().zip(gold).filter(|&(&p, &y)| p == c && y == c).count() as f64;
        let pp = pred.iter().filter(|&&p| p == c).count() as f64;
        let ap = gold.iter().filter(|&&y| y == c).count() as f64;
        let (prec, rec) = (if pp > 0.0 { tp / pp } else { 0.0 }, if ap > 0.0 { tp / ap } else { 0.0 });
        if prec + rec > 0.0 {
            2.0 * prec * rec / (prec + rec)
        } else {
            0.0
        }
    };
    (acc, (f1(0) + f1(1)) / 2.0)
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for v in 0..METRIC_VECTORS {
        let n = rng.random_range(1..=60);
        let bias = rng.random_range(0.0..=1.0);
        let pred: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(bias))).collect();
        let gold: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
        let cm = ConfusionMatrix::from_labels(&pred, &gold).map_err(|e| e.to_string())?;
        let (acc, f1) = brute_force_metrics(&pred, &gold);
        let da = (accuracy(&cm).unwrap() - acc).abs();
        let df = (macro_f1(&cm).unwrap() - f1).abs();
        worst = worst.max(da).max(df);
        ensure!(da < METRIC_TOL && df < METRIC_TOL, "vector {v}: accuracy off by {da}, macro-F1 off by {df}");
    }
    let cm = ConfusionMatrix::new(45, 5, 35, 15);
    let acc = accuracy(&cm).unwrap();
    let f1 = macro_f1(&cm).unwrap();
    // F1(sarcastic) = 90/110, F1(literal) = 70/90, mean 79/99
    let hand = (9.0 / 11.0 + 7.0 / 9.0) / 2.0;
    ensure!((acc - 0.80).abs() < METRIC_TOL, "fixture accuracy {acc}");
    ensure!((f1 - hand).abs() < METRIC_TOL, "fixture macro-F1 {f1}, hand value {hand}");
    let quoted = 0.79722;
    Ok(format!(
        "{METRIC_VECTORS} vectors, max deviation {worst:.1e}; fixture accuracy {acc:.2}, macro-F1 {f1:.6} = 79/99 \
         (0.79722 is not reproducible from these counts, off by {:.1e})",
        (f1 - quoted).abs()
    ))
}

fn loss_checks() -> Check {
    let loss = bce_loss(&[0.5, 0.5], &[1, 0]).map_err(|e| e.to_string())?;
    let dev = (loss - std::f64::consts::LN_2).abs();
    ensure!(dev < BCE_TOL, "bce {loss} differs from ln 2 by {dev}");

    let corpus = separable_corpus(40, 303);
    let mut model = BaselineModel::zeros(DEFAULT_BUCKETS, 0);
    let data: Vec<_> = corpus.iter().map(|r| (model.featurize(&r.chain_text), r.label)).collect();
    let mut used: Vec<u32> = data.iter().flat_map(|(x, _)| x.iter().map(|(i, _)| *i)).collect();
    used.sort_unstable();
    used.dedup();
    let mut rng = ChaCha8Rng::seed_from_u64(304);
    for &i in &used {
        model.weights_mut()[i as usize] = rng.random_range(-1.0..1.0);
    }
    model.set_bias(-0.2);
    let (grad, _) = model.gradient(&data);
    let mut worst: f64 = 0.0;
    for _ in 0..GRADIENT_COORDS {
        let i = used[rng.random_range(0..used.len())] as usize;
        let w = model.weights()[i];
        model.weights_mut()[i] = w + FD_STEP;
        let up = model.loss(&data);
        model.weights_mut()[i] = w - FD_STEP;
        let down = model.loss(&data);
        model.weights_mut()[i] = w;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = (numeric - grad[i]).abs() / grad[i].abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
        ensure!(rel < GRADIENT_REL_TOL, "coordinate {i}: analytic {} numeric {numeric}", grad[i]);
    }
    Ok(format!("bce deviation {dev:.1e}; {GRADIENT_COORDS} coordinates, worst relative error {worst:.1e}"))
}

fn baseline_adjudicator() -> Check {
    let all: Vec<(String, u8)> = separable_corpus(200, 2024).into_iter().map(|r| (r.chain_text, r.label)).collect();
    let (train, test) = all.split_at(150);
    let hyper = TrainerHyper { seed: 17, ..TrainerHyper::default() };
    let (model, _) = train_baseline(train, &hyper, DEFAULT_BUCKETS).map_err(|e| e.to_string())?;
    let correct = test.iter().filter(|(t, y)| u8::from(model.probability(t) >= 0.5) == *y).count();
    let acc = correct as f64 / test.len() as f64;
    ensure!(acc >= HELD_OUT_MIN_ACCURACY, "held-out accuracy {acc}");
    let (again, _) = train_baseline(train, &hyper, DEFAULT_BUCKETS).map_err(|e| e.to_string())?;
    ensure!(model.to_bytes() == again.to_bytes(), "retrained model differs");
    Ok(format!("held-out accuracy {acc:.3} on {} chains; retrain digest {}", test.len(), &model.digest()[..16]))
}

fn replay(dir: &TempDir, model: &std::path::Path) -> Check {
    let outs = ["replay-a", "replay-b"].map(|d| dir.path().join(d));
    for out_dir in &outs {
        let out = run_fixture("sarcasm20.jsonl", Some(model), out_dir, &["--seed", "11"]);
        ensure!(out.status.success(), "run failed: {}", stderr(&out));
    }
    for f in ["predictions.jsonl", "transcripts.jsonl"] {
        let a = fs::read(outs[0].join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(outs[1].join(f)).map_err(|e| e.to_string())?;
        ensure!(a == b, "{f} differs between runs");
    }
    Ok("two CLI runs produced byte-identical predictions and transcripts".into())
}

fn transcripts(path: &std::path::Path) -> Result<Vec<EngineTranscript>, String> {
    read_lines(path)
        .into_iter()
        .map(|v| serde_json::from_value(v).map_err(|e| e.to_string()))
        .collect()
}

fn ablations(dir: &TempDir, model: &std::path::Path) -> Check {
    let static_dir = dir.path().join("no-evolving");
    let out = run_fixture("sarcasm20.jsonl", Some(model), &static_dir, &["--ablation", "no-evolving"]);
    ensure!(out.status.success(), "no-evolving run failed: {}", stderr(&out));
    let ts = transcripts(&static_dir.join("transcripts.jsonl"))?;
    ensure!(ts.len() == 20, "{} transcripts", ts.len());
    for t in &ts {
        let evolved = t.events.iter().any(|e| matches!(e, EngineEvent::Refined { .. } | EngineEvent::Expanded { .. }));
        ensure!(!evolved, "{} refined or expanded", t.instance_id);
    }

    let no_sia_dir = dir.path().join("no-sia");
    let out = run_fixture("sarcasm20.jsonl", Some(model), &no_sia_dir, &["--ablation", "no-sia"]);
    ensure!(out.status.success(), "no-sia run failed: {}", stderr(&out));
    let path = no_sia_dir.join("transcripts.jsonl");
    let ts = transcripts(&path)?;
    ensure!(ts.len() == 20, "{} transcripts", ts.len());
    for t in &ts {
        ensure!(!t.mentioned_roles().contains(&AgentRole::Sia), "{} mentions SIA", t.instance_id);
    }
    let raw = fs::read_to_string(&path).map_err(|e| e.to_string())?;
    ensure!(!raw.contains("\"SIA\"") && !raw.contains("[SIA"), "SIA appears in the serialized transcripts");
    Ok("20 static transcripts free of Refined/Expanded; 20 no-sia transcripts never mention SIA".into())
}

fn decoupling(model: &std::path::Path) -> Check {
    let split = load_jsonl(&fixture("sarcasm20.jsonl")).map_err(|e| e.to_string())?;
    let script = MockScript::load(&fixture("mock_script.json")).map_err(|e| e.to_string())?;
    let search = StubSearch::load_dir(&fixture("search")).map_err(|e| e.to_string())?;
    let backend = MockBackend::new(script);
    let engine = Engine::new(EngineConfig::default(), AgentPool::default()).map_err(|e| e.to_string())?;
    let recorder = RecordingAdjudicator::new(BaselineModel::load(model).map_err(|e| e.to_string())?);
    let c = Components {
        engine: &engine,
        backend: &backend,
        search: &search,
        decider: Decider::Adjudicator(&recorder),
    };
    let outcomes = run_instances(&c, &split.instances, 4);
    let inputs = recorder.inputs();
    ensure!(inputs.len() == split.len(), "{} adjudicator calls for {} instances", inputs.len(), split.len());
    let texts: HashMap<&str, &str> = split.instances.iter().map(|i| (i.id.as_str(), i.text.as_str())).collect();
    let chains: Vec<String> = outcomes
        .iter()
        .filter_map(InstanceOutcome::prediction)
        .map(|p| p.chain.canonical_text().to_string())
        .collect();
    for input in &inputs {
        ensure!(ReasoningChain::parse_canonical(input).is_ok(), "non-canonical adjudicator input: {input:?}");
        ensure!(chains.contains(input), "adjudicator input is not a produced chain");
        for (id, text) in &texts {
            ensure!(!input.contains(text), "adjudicator input carries the text of {id}");
        }
    }
    Ok(format!("{} adjudicator inputs, all canonical chains without instance text", inputs.len()))
}

fn search_events(t: &EngineTranscript) -> impl Iterator<Item = (&Vec<String>, usize, bool)> {
    t.events.iter().filter_map(|e| match e {
        EngineEvent::SearchInvoked { keywords, snippets, error } => Some((keywords, snippets.len(), error.is_some())),
        _ => None,
    })
}

fn support_contracts(dir: &TempDir, model: &std::path::Path) -> Check {
    ensure!(KeywordQuery::new(vec![]).is_err(), "empty keyword list accepted");
    ensure!(KeywordQuery::new(vec!["a".into(), "b".into(), "c".into()]).is_err(), "three keywords accepted");

    let out_dir = dir.path().join("support");
    let out = run_fixture("sarcasm20.jsonl", Some(model), &out_dir, &[]);
    ensure!(out.status.success(), "run failed: {}", stderr(&out));
    let mut invoked = 0;
    let mut max_snippets = 0;
    for t in transcripts(&out_dir.join("transcripts.jsonl"))? {
        for (keywords, n, _) in search_events(&t) {
            invoked += 1;
            max_snippets = max_snippets.max(n);
            ensure!((1..=2).contains(&keywords.len()), "{}: {} keywords", t.instance_id, keywords.len());
            ensure!(n <= MAX_SNIPPETS, "{}: {n} snippets", t.instance_id);
        }
    }
    ensure!(invoked > 0, "fixture never invoked search");

    let split = load_jsonl(&fixture("sarcasm20.jsonl")).map_err(|e| e.to_string())?;
    let backend = MockBackend::new(MockScript::load(&fixture("mock_script.json")).map_err(|e| e.to_string())?);
    let outage = HttpSearch::new("http://127.0.0.1:9", Duration::from_millis(500));
    let engine = Engine::new(EngineConfig::default(), AgentPool::default()).map_err(|e| e.to_string())?;
    let mut degraded = 0;
    for inst in &split.instances {
        let run = engine.run_instance(&backend, &outage, inst).map_err(|e| format!("{}: {}", inst.id, e.error))?;
        ensure!(run.transcript.failure.is_none(), "{} failed during search outage", inst.id);
        for (_, n, errored) in search_events(&run.transcript) {
            ensure!(n == 0 && errored, "{}: outage produced evidence", inst.id);
            degraded += 1;
        }
    }
    ensure!(degraded > 0, "outage path never exercised");
    Ok(format!(
        "{invoked} searches with 1-2 keywords and at most {max_snippets} snippets; {degraded} outages degraded to empty evidence"
    ))
}

fn main() -> ExitCode {
    let dir = TempDir::new().expect("tempdir");
    let model = train_model(dir.path());
    let criteria: Vec<Criterion> = vec![
        ("termination", Box::new(termination)),
        ("find_ambivalent oracle", Box::new(find_ambivalent_oracle)),
        ("metric oracles", Box::new(metric_oracles)),
        ("loss and gradient", Box::new(loss_checks)),
        ("baseline adjudicator", Box::new(baseline_adjudicator)),
        ("determinism/replay", Box::new(|| replay(&dir, &model))),
        ("ablation contracts", Box::new(|| ablations(&dir, &model))),
        ("decoupling", Box::new(|| decoupling(&model))),
        ("support-agent contracts", Box::new(|| support_contracts(&dir, &model))),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        match check() {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
