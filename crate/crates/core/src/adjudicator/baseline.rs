//! Logistic regression over hashed n-gram features, trained with SGD on the
//! binary cross-entropy loss.

use std::fs;
use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::features::{featurize, FeatureVector};
use super::{bce_loss, Adjudicator, AdjudicatorError, RationaleInput, Verdict};

pub const DEFAULT_BUCKETS: u32 = 1 << 18;
pub const MODEL_MAGIC: &[u8; 4] = b"SEVA";
pub const MODEL_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 + 8;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainerHyper {
    pub learning_rate: f64,
    pub epochs: u32,
    pub seed: u64,
}

impl Default for TrainerHyper {
    fn default() -> Self {
        TrainerHyper {
            learning_rate: 0.1,
            epochs: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub examples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineModel {
    n_buckets: u32,
    weights: Vec<f64>,
    bias: f64,
    seed: u64,
}

impl BaselineModel {
    pub fn zeros(n_buckets: u32, seed: u64) -> Self {
        assert!(n_buckets > 0, "n_buckets must be positive");
        BaselineModel {
            n_buckets,
            weights: vec![0.0; n_buckets as usize],
            bias: 0.0,
            seed,
        }
    }

    pub fn n_buckets(&self) -> u32 {
        self.n_buckets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn set_bias(&mut self, bias: f64) {
        self.bias = bias;
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn featurize(&self, text: &str) -> FeatureVector {
        featurize(text, self.n_buckets)
    }

    pub fn logit(&self, x: &FeatureVector) -> f64 {
        self.bias + x.iter().map(|&(i, v)| self.weights[i as usize] * v).sum::<f64>()
    }

    pub fn probability(&self, text: &str) -> f64 {
        sigmoid(self.logit(&self.featurize(text)))
    }

    /// Mean BCE over featurized examples.
    pub fn loss(&self, data: &[(FeatureVector, u8)]) -> f64 {
        let preds: Vec<f64> = data.iter().map(|(x, _)| sigmoid(self.logit(x))).collect();
        let labels: Vec<u8> = data.iter().map(|(_, y)| *y).collect();
        bce_loss(&preds, &labels).expect("predictions and labels have equal length")
    }

    /// Analytic gradient of [`BaselineModel::loss`]: a dense weight gradient
    /// and the bias gradient.
    pub fn gradient(&self, data: &[(FeatureVector, u8)]) -> (Vec<f64>, f64) {
        let n = data.len() as f64;
        let mut gw = vec![0.0; self.n_buckets as usize];
        let mut gb = 0.0;
        for (x, y) in data {
            let err = sigmoid(self.logit(x)) - f64::from(*y);
            for &(i, v) in x {
                gw[i as usize] += err * v / n;
            }
            gb += err / n;
        }
        (gw, gb)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * (self.weights.len() + 1));
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&self.n_buckets.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.bias.to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, AdjudicatorError> {
        let bad = |m: &str| AdjudicatorError::ModelFormat(m.to_string());
        if bytes.len() < HEADER_LEN + 8 {
            return Err(bad("file too short"));
        }
        if &bytes[0..4] != MODEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let version = u32_at(4);
        if version != MODEL_VERSION {
            return Err(AdjudicatorError::ModelFormat(format!("unsupported version {version}")));
        }
        let n_buckets = u32_at(8);
        let seed = u64_at(12);
        let expected = HEADER_LEN + 8 * (n_buckets as usize + 1);
        if n_buckets == 0 || bytes.len() != expected {
            return Err(AdjudicatorError::ModelFormat(format!(
                "expected {expected} bytes for {n_buckets} buckets, found {}",
                bytes.len()
            )));
        }
        let bias = f64::from_bits(u64_at(HEADER_LEN));
        let weights = bytes[HEADER_LEN + 8..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(BaselineModel {
            n_buckets,
            weights,
            bias,
            seed,
        })
    }

    /// Hex SHA-256 of the serialized model file.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, AdjudicatorError> {
        match fs::read(path) {
            Ok(bytes) => Self::from_bytes(&bytes),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(AdjudicatorError::ModelMissing(path.display().to_string())),
            Err(e) => Err(AdjudicatorError::ModelFormat(format!("{}: {e}", path.display()))),
        }
    }
}

impl Adjudicator for BaselineModel {
    fn adjudicate(&self, input: RationaleInput<'_>) -> Result<Verdict, AdjudicatorError> {
        Ok(Verdict::from_probability(self.probability(input.as_str())))
    }
}

/// Trains a model on `(canonical chain text, label)` pairs with per-example
/// SGD in a seeded shuffle order.
pub fn train_baseline(
    examples: &[(String, u8)],
    hyper: &TrainerHyper,
    n_buckets: u32,
) -> Result<(BaselineModel, TrainReport), AdjudicatorError> {
    if examples.len() < 2 {
        return Err(AdjudicatorError::DegenerateData(format!(
            "need at least 2 examples, got {}",
            examples.len()
        )));
    }
    if let Some(bad) = examples.iter().find(|(_, y)| *y > 1) {
        return Err(AdjudicatorError::DegenerateData(format!("label {} is not binary", bad.1)));
    }
    let positives = examples.iter().filter(|(_, y)| *y == 1).count();
    if positives == 0 || positives == examples.len() {
        return Err(AdjudicatorError::DegenerateData(format!(
            "all {} examples carry label {}; both classes are required",
            examples.len(),
            examples[0].1
        )));
    }

    let mut model = BaselineModel::zeros(n_buckets, hyper.seed);
    let data: Vec<(FeatureVector, u8)> = examples.iter().map(|(t, y)| (model.featurize(t), *y)).collect();
    let initial_loss = model.loss(&data);

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for &k in &order {
            let (x, y) = &data[k];
            let err = sigmoid(model.logit(x)) - f64::from(*y);
            let step = hyper.learning_rate * err;
            for &(i, v) in x {
                model.weights[i as usize] -= step * v;
            }
            model.bias -= step;
        }
    }
    let final_loss = model.loss(&data);
    Ok((
        model,
        TrainReport {
            initial_loss,
            final_loss,
            examples: data.len(),
        },
    ))
}
