//! Seeded synthetic comparison corpora with known ground truth.
//!
//! Prompts are drawn from per-cluster pseudo-word vocabularies so a text
//! embedder can recover the topics. The winner, the response-embedding
//! difference and the difficulty score follow configurable rules, which makes
//! the generator itself the oracle for probe tests.

use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ingest::{ComparisonRecord, Outcome, RESPONSE_DIFF_DIM};
use crate::text::is_stop_word;

use super::ProbeError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinnerRule {
    /// Outcome `ALL[c mod 5]` for true cluster `c`.
    ClusterDriven,
    /// A wins on even clusters, B on odd.
    ClusterParity,
    /// The model with the larger index wins; independent of the prompt.
    ModelStrength,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyRule {
    None,
    Constant(f64),
    /// `1.5 + 7c/(C−1) + N(0, σ)`, clamped to [1, 10].
    ClusterBase { sigma: f64 },
    /// `mean + N(0, σ)`, clamped to [1, 10]; ignores the cluster.
    Independent { mean: f64, sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub clusters: usize,
    pub models: usize,
    pub records: usize,
    pub winner_rule: WinnerRule,
    /// Probability of replacing the rule's outcome with a uniformly drawn one.
    pub label_noise: f64,
    pub difficulty_rule: DifficultyRule,
    /// Scale of the outcome direction in the response-embedding difference.
    pub diff_signal: f64,
    /// Standard deviation of the isotropic noise added to it.
    pub diff_noise: f64,
    pub words_per_cluster: usize,
}

impl SyntheticSpec {
    /// Winner and difficulty both determined by the cluster.
    pub fn cluster_driven(records: usize) -> Self {
        SyntheticSpec {
            clusters: 10,
            models: 5,
            records,
            winner_rule: WinnerRule::ClusterDriven,
            label_noise: 0.0,
            difficulty_rule: DifficultyRule::ClusterBase { sigma: 0.5 },
            diff_signal: 0.2,
            diff_noise: 1.0,
            words_per_cluster: 15,
        }
    }

    /// Same topics, but winner and difficulty ignore them.
    pub fn cluster_free(records: usize) -> Self {
        SyntheticSpec {
            winner_rule: WinnerRule::ModelStrength,
            label_noise: 0.1,
            difficulty_rule: DifficultyRule::Independent { mean: 5.0, sigma: 0.5 },
            ..Self::cluster_driven(records)
        }
    }

    fn check(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::InconsistentSpec(m.to_string()));
        if self.clusters == 0 {
            return bad("cluster count must be positive");
        }
        if self.models < 2 {
            return bad("need at least two models");
        }
        if self.records == 0 {
            return bad("record count must be positive");
        }
        if self.words_per_cluster < 2 {
            return bad("need at least two words per cluster");
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad("label noise must lie in [0, 1]");
        }
        if !(self.diff_noise >= 0.0 && self.diff_signal.is_finite() && self.diff_noise.is_finite()) {
            return bad("embedding-difference scales must be finite, noise >= 0");
        }
        match self.difficulty_rule {
            DifficultyRule::Constant(v) if !(1.0..=10.0).contains(&v) => bad("constant difficulty outside [1, 10]"),
            DifficultyRule::ClusterBase { .. } if self.clusters < 2 => {
                bad("cluster-based difficulty needs at least two clusters")
            }
            DifficultyRule::ClusterBase { sigma } | DifficultyRule::Independent { sigma, .. }
                if !(sigma >= 0.0 && sigma.is_finite()) =>
            {
                bad("difficulty sigma must be finite and >= 0")
            }
            DifficultyRule::Independent { mean, .. } if !mean.is_finite() => bad("difficulty mean must be finite"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<ComparisonRecord>,
    pub true_clusters: Vec<usize>,
}

const SYLLABLE_HEADS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const SYLLABLE_VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    (0..3)
        .map(|_| {
            let h = SYLLABLE_HEADS.choose(rng).unwrap();
            let v = SYLLABLE_VOWELS.choose(rng).unwrap();
            format!("{h}{v}")
        })
        .collect()
}

fn vocabularies(clusters: usize, words: usize, fillers: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<String>>, Vec<String>) {
    let mut used = HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng| loop {
        let w = pseudo_word(rng);
        if !is_stop_word(&w) && used.insert(w.clone()) {
            return w;
        }
    };
    let vocab = (0..clusters)
        .map(|_| (0..words).map(|_| fresh(rng)).collect())
        .collect();
    let filler = (0..fillers).map(|_| fresh(rng)).collect();
    (vocab, filler)
}

fn unit_directions(count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            let v: Vec<f64> = (0..RESPONSE_DIFF_DIM).map(|_| StandardNormal.sample(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

pub fn rule_outcome(rule: WinnerRule, cluster: usize, a: usize, b: usize) -> Outcome {
    match rule {
        WinnerRule::ClusterDriven => Outcome::ALL[cluster % Outcome::ALL.len()],
        WinnerRule::ClusterParity => {
            if cluster % 2 == 0 {
                Outcome::AWins
            } else {
                Outcome::BWins
            }
        }
        WinnerRule::ModelStrength => {
            if a > b {
                Outcome::AWins
            } else {
                Outcome::BWins
            }
        }
    }
}

/// Noise-free part of the difficulty rule.
pub fn rule_difficulty(rule: DifficultyRule, cluster: usize, clusters: usize) -> Option<f64> {
    match rule {
        DifficultyRule::None => None,
        DifficultyRule::Constant(v) => Some(v),
        DifficultyRule::ClusterBase { .. } => Some(1.5 + 7.0 * cluster as f64 / (clusters - 1) as f64),
        DifficultyRule::Independent { mean, .. } => Some(mean),
    }
}

pub fn model_name(i: usize) -> String {
    format!("model-{i:02}")
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticCorpus, ProbeError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (vocab, filler) = vocabularies(spec.clusters, spec.words_per_cluster, 20, &mut rng);
    let directions = unit_directions(Outcome::ALL.len(), &mut rng);
    let diff_noise = Normal::new(0.0, spec.diff_noise).expect("checked noise");
    let sigma = match spec.difficulty_rule {
        DifficultyRule::ClusterBase { sigma } | DifficultyRule::Independent { sigma, .. } => sigma,
        _ => 0.0,
    };
    let difficulty_noise = Normal::new(0.0, sigma).expect("checked sigma");

    let mut records = Vec::with_capacity(spec.records);
    let mut true_clusters = Vec::with_capacity(spec.records);
    for i in 0..spec.records {
        let c = rng.random_range(0..spec.clusters);
        let a = rng.random_range(0..spec.models);
        let b = (a + rng.random_range(1..spec.models)) % spec.models;

        let n_topic = rng.random_range(6..=10);
        let mut words: Vec<&str> = (0..n_topic)
            .map(|_| vocab[c].choose(&mut rng).unwrap().as_str())
            .collect();
        for _ in 0..rng.random_range(1..=2) {
            let pos = rng.random_range(0..=words.len());
            words.insert(pos, filler.choose(&mut rng).unwrap());
        }
        let prompt = words.join(" ");

        let mut outcome = rule_outcome(spec.winner_rule, c, a, b);
        if spec.label_noise > 0.0 && rng.random_bool(spec.label_noise) {
            outcome = *Outcome::ALL.choose(&mut rng).unwrap();
        }

        let diff: Vec<f64> = directions[outcome.index()]
            .iter()
            .map(|u| spec.diff_signal * u + diff_noise.sample(&mut rng))
            .collect();

        let mut record = ComparisonRecord::new(format!("syn-{i:06}"), prompt, model_name(a), model_name(b), outcome)
            .and_then(|r| r.with_response_diff(diff))
            .map_err(|e| ProbeError::InconsistentSpec(e.to_string()))?;
        if let Some(base) = rule_difficulty(spec.difficulty_rule, c, spec.clusters) {
            let d = (base + difficulty_noise.sample(&mut rng)).clamp(1.0, 10.0);
            record = record
                .with_difficulty(d)
                .map_err(|e| ProbeError::InconsistentSpec(e.to_string()))?;
        }
        records.push(record);
        true_clusters.push(c);
    }
    Ok(SyntheticCorpus {
        records,
        true_clusters,
    })
}
