use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use delegation_cues::delegation::{DelegationEngine, DelegationPolicy, PolicyConfig, Safeguard};
use delegation_cues::matrix::Matrix;
use delegation_cues::pipeline::{assign_records, fit_clusters, SIGNALS_FILE, TASK_MODEL_FILE};
use delegation_cues::probes::{generate_synthetic_corpus, SyntheticSpec};
use delegation_cues::signals::{SignalArtifact, SignalConfig, Tally};
use delegation_cues::tasktyping::{EmbeddingProvider, Reducer, TaskTypeModel, TaskTypingConfig};
use rand::seq::SliceRandom;
use rand::Rng;

/// Four 2-d centroids; cluster 3 is retired into cluster 0.
pub fn toy_model() -> TaskTypeModel {
    TaskTypeModel {
        embedder: EmbeddingProvider::hash(2, 0),
        reducer: Reducer {
            input_dim: 2,
            output_dim: 2,
            basis: vec![1.0, 0.0, 0.0, 1.0],
            center: vec![0.0, 0.0],
        },
        centroids: Matrix::from_rows(&[vec![0.0, 0.0], vec![4.0, 0.0], vec![0.0, 3.0], vec![0.5, 0.5]]).unwrap(),
        labels: vec!["origin".into(), "east".into(), "north".into(), "merged".into()],
        reassignment_map: BTreeMap::from([(3, 0)]),
        min_cluster_size: 2,
        fit_seed: 1,
    }
}

/// Cluster 0 calm (tie rate 0.1, m2 best), cluster 1 risky (tie rate 2/3,
/// m1 best), cluster 2 without tie evidence.
pub fn toy_signals(model: &TaskTypeModel) -> SignalArtifact {
    let mut s = SignalArtifact {
        task_model_version: model.version(),
        ..Default::default()
    };
    for (m, c, hits, support) in [
        ("m1", 0, 10, 40),
        ("m2", 0, 30, 40),
        ("m3", 0, 20, 40),
        ("m1", 1, 25, 30),
        ("m2", 1, 5, 30),
        ("m3", 2, 1, 1),
    ] {
        s.win.insert((m.into(), c), Tally { hits, support });
    }
    s.tie.insert(0, Tally { hits: 4, support: 40 });
    s.tie.insert(1, Tally { hits: 20, support: 30 });
    for (m, hits) in [("m1", 35), ("m2", 35), ("m3", 21)] {
        s.global.insert(m.into(), Tally { hits, support: 71 });
    }
    s
}

pub fn policy(tau: f64, min_support: u64) -> DelegationPolicy {
    PolicyConfig {
        tau: Some(tau),
        min_support,
        ..Default::default()
    }
    .resolve(&SignalArtifact::default())
    .unwrap()
}

pub fn toy_engine(tau: f64) -> DelegationEngine {
    let m = toy_model();
    let s = toy_signals(&m);
    DelegationEngine::new(Arc::new(m), Arc::new(s), policy(tau, 20)).unwrap()
}

/// A randomly drawn model, artifact and policy.
#[derive(Debug, Clone)]
pub struct World {
    pub model: TaskTypeModel,
    pub signals: SignalArtifact,
    pub policy: DelegationPolicy,
}

impl World {
    pub fn engine(&self) -> DelegationEngine {
        DelegationEngine::new(Arc::new(self.model.clone()), Arc::new(self.signals.clone()), self.policy.clone())
            .unwrap()
    }

    /// Every count multiplied by `k`, and the support gate with it.
    pub fn scaled(&self, k: u64) -> World {
        let mut w = self.clone();
        let scale = |t: &mut Tally| {
            t.hits *= k;
            t.support *= k;
        };
        w.signals.win.values_mut().for_each(scale);
        w.signals.tie.values_mut().for_each(scale);
        w.signals.global.values_mut().for_each(scale);
        w.policy.min_support *= k;
        w
    }

    pub fn win_counts(&self) -> BTreeMap<(String, usize), (u64, u64)> {
        self.signals.win.iter().map(|(k, t)| (k.clone(), (t.hits, t.support))).collect()
    }

    pub fn global_counts(&self) -> BTreeMap<String, (u64, u64)> {
        self.signals.global.iter().map(|(k, t)| (k.clone(), (t.hits, t.support))).collect()
    }
}

const SAFEGUARDS: [Safeguard; 4] = [
    Safeguard::ClarifyOnce,
    Safeguard::Audit,
    Safeguard::CiteSources,
    Safeguard::StepwisePlan,
];

pub fn random_world(rng: &mut impl Rng) -> World {
    let k = rng.random_range(2..=6);
    let dim = 2;
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut reassignment_map = BTreeMap::new();
    if k > 2 && rng.random_bool(0.4) {
        let retired = rng.random_range(1..k);
        let target = rng.random_range(0..retired);
        reassignment_map.insert(retired, target);
    }
    let model = TaskTypeModel {
        embedder: EmbeddingProvider::hash(dim, rng.random()),
        reducer: Reducer {
            input_dim: dim,
            output_dim: dim,
            basis: vec![1.0, 0.0, 0.0, 1.0],
            center: vec![0.0; dim],
        },
        centroids: Matrix::from_rows(&rows).unwrap(),
        labels: (0..k).map(|c| format!("type {c}")).collect(),
        reassignment_map,
        min_cluster_size: 1,
        fit_seed: 0,
    };

    let n_models = rng.random_range(2..=5);
    let models: Vec<String> = (0..n_models).map(|i| format!("model-{i}")).collect();
    let mut signals = SignalArtifact {
        task_model_version: model.version(),
        ..Default::default()
    };
    for m in &models {
        let mut total = Tally::default();
        for c in 0..k {
            if rng.random_bool(0.2) {
                continue;
            }
            // Small supports make exact rate ties between models common.
            let support = rng.random_range(1..=12u64);
            let hits = rng.random_range(0..=support);
            signals.win.insert((m.clone(), c), Tally { hits, support });
            total.hits += hits;
            total.support += support;
        }
        if total.support == 0 {
            total = Tally { hits: 0, support: 1 };
        }
        signals.global.insert(m.clone(), total);
    }
    for c in 0..k {
        match rng.random_range(0..10) {
            0 | 1 => {}
            2 => {
                signals.tie.insert(c, Tally { hits: 0, support: 0 });
            }
            _ => {
                let support = rng.random_range(1..=10u64);
                signals.tie.insert(c, Tally { hits: rng.random_range(0..=support), support });
            }
        }
    }

    // Half the time τ sits exactly on some cluster's rate to exercise the
    // strict comparison.
    let rates: Vec<f64> = signals.tie.values().filter(|t| t.support > 0).map(|t| t.rate()).collect();
    let tau = if !rates.is_empty() && rng.random_bool(0.5) {
        rates[rng.random_range(0..rates.len())]
    } else {
        f64::from(rng.random_range(0..=10u32)) / 10.0
    };
    let mut safeguards = SAFEGUARDS.to_vec();
    safeguards.shuffle(rng);
    safeguards.truncate(rng.random_range(1..=4));
    let policy = DelegationPolicy {
        tau,
        min_support: rng.random_range(1..=8),
        safeguards,
        sensitive_clusters: BTreeSet::new(),
        noise_epsilon: 1.0,
        retain_prompts: rng.random_bool(0.3),
    };
    policy.validate().unwrap();
    World { model, signals, policy }
}

pub fn random_prompt(rng: &mut impl Rng) -> String {
    const WORDS: [&str; 12] = [
        "sort", "poem", "integral", "summary", "debug", "recipe", "proof", "email", "translate", "plan", "sql", "haiku",
    ];
    let n = rng.random_range(1..=6);
    (0..n).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// Task model and signal artifact fitted on a small synthetic corpus and
/// written to `dir`. Returns both paths.
pub fn write_pipeline_artifacts(dir: &Path, records: usize, seed: u64) -> (PathBuf, PathBuf) {
    let corpus = generate_synthetic_corpus(&SyntheticSpec::cluster_driven(records), seed).unwrap();
    let typing = TaskTypingConfig {
        cluster_count: 6,
        seed,
        ..Default::default()
    };
    let fit = fit_clusters(&corpus.records, &EmbeddingProvider::hash(64, seed), &typing, false).unwrap();
    let clusters = assign_records(&corpus.records, &fit.model, false).unwrap();
    let signals =
        SignalArtifact::build(&corpus.records, &clusters, fit.model.version(), 0, SignalConfig::default()).unwrap();
    let tm = dir.join(TASK_MODEL_FILE);
    let sig = dir.join(SIGNALS_FILE);
    fit.model.save(&tm).unwrap();
    signals.save(&sig).unwrap();
    (tm, sig)
}
