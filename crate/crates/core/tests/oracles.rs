//! Independent reference implementations checked against the library.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use sevade_core::adjudicator::{bce_loss, train_baseline, BaselineModel, TrainerHyper, DEFAULT_BUCKETS};
use sevade_core::engine::find_ambivalent;
use sevade_core::metrics::{accuracy, macro_f1, ConfusionMatrix};
use sevade_core::testkit::separable_corpus;
use sevade_core::{AgentOutput, AgentRole, AgentTeamState};

/// Exhaustive scan on exact integer distances: intensities are k/100, so
/// |σ − 0.5| is |k − 50| hundredths with no rounding.
fn ambivalent_oracle(team: &[(AgentRole, u32)]) -> AgentRole {
    let best = team.iter().map(|&(_, k)| (k as i64 - 50).abs()).min().unwrap();
    let tied: Vec<AgentRole> = team.iter().filter(|&&(_, k)| (k as i64 - 50).abs() == best).map(|&(r, _)| r).collect();
    *tied
        .iter()
        .min_by_key(|r| AgentRole::ALL.iter().position(|x| x == *r).unwrap())
        .unwrap()
}

fn random_team(rng: &mut ChaCha8Rng, engineered_ties: bool) -> Vec<(AgentRole, u32)> {
    let size = rng.random_range(1..=6);
    let mut roles = AgentRole::ALL.to_vec();
    for i in (1..roles.len()).rev() {
        roles.swap(i, rng.random_range(0..=i));
    }
    roles.truncate(size);
    let pivot: u32 = rng.random_range(0..=50);
    roles
        .into_iter()
        .map(|r| {
            let k = if engineered_ties && rng.random_bool(0.6) {
                // mirror images around 0.5 share a distance
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
        .collect()
}

fn state(team: &[(AgentRole, u32)]) -> AgentTeamState {
    AgentTeamState::new(
        AgentRole::ALL,
        team.iter().map(|&(r, k)| AgentOutput::new(r, f64::from(k) / 100.0, "x", 0).unwrap()),
    )
    .unwrap()
}

#[test]
fn find_ambivalent_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut ties = 0;
    for case in 0..1000 {
        let team = random_team(&mut rng, case % 2 == 0);
        let best = team.iter().map(|&(_, k)| (k as i64 - 50).abs()).min().unwrap();
        if team.iter().filter(|&&(_, k)| (k as i64 - 50).abs() == best).count() > 1 {
            ties += 1;
        }
        assert_eq!(find_ambivalent(&state(&team)).unwrap(), ambivalent_oracle(&team), "case {case}: {team:?}");
    }
    assert!(ties > 100, "only {ties} tied cases generated");
}

#[test]
fn find_ambivalent_on_continuous_intensities() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..1000 {
        let n = rng.random_range(1..=6);
        let outputs: Vec<AgentOutput> = AgentRole::ALL[..n]
            .iter()
            .map(|&r| AgentOutput::new(r, rng.random_range(0.0..=1.0), "x", 0).unwrap())
            .collect();
        let expected = outputs
            .iter()
            .fold(None::<&AgentOutput>, |best, o| match best {
                Some(b) if (b.intensity - 0.5).abs() <= (o.intensity - 0.5).abs() => Some(b),
                _ => Some(o),
            })
            .unwrap()
            .role;
        let st = AgentTeamState::new(AgentRole::ALL, outputs).unwrap();
        assert_eq!(find_ambivalent(&st).unwrap(), expected);
    }
}

/// Per-class precision and recall counted directly from the vectors.
fn brute_force(pred: &[u8], gold: &[u8]) -> (f64, f64) {
    let n = pred.len() as f64;
    let correct = pred.iter().zip(gold).filter(|(p, y)| p == y).count() as f64;
    let mut f1s = Vec::new();
    for class in [1u8, 0u8] {
        let tp = pred.iter().zip(gold).filter(|(p, y)| **p == class && **y == class).count() as f64;
        let predicted = pred.iter().filter(|p| **p == class).count() as f64;
        let actual = gold.iter().filter(|y| **y == class).count() as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        f1s.push(if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 });
    }
    (correct / n, (f1s[0] + f1s[1]) / 2.0)
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..200 {
        let n = rng.random_range(1..=50);
        let skew = rng.random_range(0.0..=1.0);
        let pred: Vec<u8> = (0..n).map(|_| rng.random_bool(skew) as u8).collect();
        let gold: Vec<u8> = (0..n).map(|_| rng.random_bool(0.5) as u8).collect();
        let cm = ConfusionMatrix::from_labels(&pred, &gold).unwrap();
        let (acc, f1) = brute_force(&pred, &gold);
        assert!((accuracy(&cm).unwrap() - acc).abs() < 1e-12);
        assert!((macro_f1(&cm).unwrap() - f1).abs() < 1e-12);
    }
}

#[test]
fn hand_computed_fixture() {
    let mut pred = Vec::new();
    let mut gold = Vec::new();
    for (p, y, count) in [(1u8, 1u8, 45), (1, 0, 5), (0, 0, 35), (0, 1, 15)] {
        pred.extend(std::iter::repeat_n(p, count));
        gold.extend(std::iter::repeat_n(y, count));
    }
    let cm = ConfusionMatrix::from_labels(&pred, &gold).unwrap();
    assert_eq!(cm, ConfusionMatrix::new(45, 5, 35, 15));
    let (acc, f1) = brute_force(&pred, &gold);
    assert!((accuracy(&cm).unwrap() - 0.80).abs() < 1e-12);
    assert!((accuracy(&cm).unwrap() - acc).abs() < 1e-12);
    assert!((macro_f1(&cm).unwrap() - f1).abs() < 1e-12);
    assert!((macro_f1(&cm).unwrap() - 79.0 / 99.0).abs() < 1e-12);
}

#[test]
fn bce_of_uninformed_predictions_is_ln2() {
    let loss = bce_loss(&[0.5, 0.5], &[1, 0]).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn gradient_matches_central_differences() {
    let corpus = separable_corpus(40, 5);
    let mut model = BaselineModel::zeros(DEFAULT_BUCKETS, 0);
    let data: Vec<_> = corpus.iter().map(|r| (model.featurize(&r.chain_text), r.label)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut used: Vec<u32> = data.iter().flat_map(|(x, _)| x.iter().map(|(i, _)| *i)).collect();
    used.sort_unstable();
    used.dedup();
    for &i in &used {
        model.weights_mut()[i as usize] = rng.random_range(-1.0..1.0);
    }
    model.set_bias(0.1);

    let (grad, _) = model.gradient(&data);
    let h = 1e-5;
    let mut checked = 0;
    while checked < 20 {
        let i = used[rng.random_range(0..used.len())] as usize;
        let w = model.weights()[i];
        model.weights_mut()[i] = w + h;
        let up = model.loss(&data);
        model.weights_mut()[i] = w - h;
        let down = model.loss(&data);
        model.weights_mut()[i] = w;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grad[i];
        let rel = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        assert!(rel < 1e-4, "coordinate {i}: analytic {analytic} numeric {numeric} rel {rel}");
        checked += 1;
    }
}

/// Bag-of-words nearest-centroid classifier with its own tokenizer.
fn nearest_centroid_accuracy(train: &[(String, u8)], test: &[(String, u8)]) -> f64 {
    let bag = |t: &str| {
        let mut m: HashMap<String, f64> = HashMap::new();
        for w in t.split(|c: char| !c.is_alphabetic()).filter(|w| !w.is_empty()) {
            *m.entry(w.to_lowercase()).or_default() += 1.0;
        }
        m
    };
    let mut centroids = [HashMap::<String, f64>::new(), HashMap::new()];
    let mut counts = [0.0f64; 2];
    for (t, y) in train {
        counts[*y as usize] += 1.0;
        for (w, c) in bag(t) {
            *centroids[*y as usize].entry(w).or_default() += c;
        }
    }
    for k in 0..2 {
        for v in centroids[k].values_mut() {
            *v /= counts[k];
        }
    }
    let dist = |x: &HashMap<String, f64>, c: &HashMap<String, f64>| {
        let mut d = 0.0;
        for (w, v) in x {
            d += (v - c.get(w).copied().unwrap_or(0.0)).powi(2);
        }
        for (w, v) in c {
            if !x.contains_key(w) {
                d += v * v;
            }
        }
        d
    };
    let correct = test
        .iter()
        .filter(|(t, y)| {
            let x = bag(t);
            let pred = u8::from(dist(&x, &centroids[1]) < dist(&x, &centroids[0]));
            pred == *y
        })
        .count();
    correct as f64 / test.len() as f64
}

fn split_corpus() -> (Vec<(String, u8)>, Vec<(String, u8)>) {
    let all: Vec<(String, u8)> = separable_corpus(200, 2024).into_iter().map(|r| (r.chain_text, r.label)).collect();
    let (train, test) = all.split_at(150);
    (train.to_vec(), test.to_vec())
}

#[test]
fn synthetic_corpus_is_separable() {
    let (train, test) = split_corpus();
    assert!(nearest_centroid_accuracy(&train, &test) >= 0.95);
}

#[test]
fn baseline_reaches_held_out_accuracy_and_retrains_bitwise() {
    let (train, test) = split_corpus();
    let hyper = TrainerHyper { seed: 17, ..TrainerHyper::default() };
    let (model, report) = train_baseline(&train, &hyper, DEFAULT_BUCKETS).unwrap();
    assert!(report.final_loss < report.initial_loss);
    let correct = test
        .iter()
        .filter(|(t, y)| u8::from(model.probability(t) >= 0.5) == *y)
        .count();
    assert!(correct as f64 / test.len() as f64 >= 0.95, "{correct}/{}", test.len());

    let (again, _) = train_baseline(&train, &hyper, DEFAULT_BUCKETS).unwrap();
    let digest = |m: &BaselineModel| hex::encode(Sha256::digest(m.to_bytes()));
    assert_eq!(digest(&model), digest(&again));

    let dir = tempfile::TempDir::new().unwrap();
    let path = dir.path().join("m.bin");
    model.save(&path).unwrap();
    assert_eq!(BaselineModel::load(&path).unwrap(), model);
}
