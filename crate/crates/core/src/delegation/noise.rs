//! Noised release of per-cluster logging frequencies.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::log_store::LogStore;
use super::policy::DelegationPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterCount {
    pub count: u64,
    pub noised: bool,
}

/// Difference of two geometric draws with success probability `1 − e^{−ε}`:
/// `P(k) ∝ e^{−ε|k|}`.
pub fn two_sided_geometric(epsilon: f64, rng: &mut ChaCha8Rng) -> i64 {
    let p = 1.0 - (-epsilon).exp();
    let g = Geometric::new(p).expect("epsilon validated positive");
    let a = g.sample(rng) as i64;
    let b = g.sample(rng) as i64;
    a - b
}

/// Live-entry counts for clusters `0..cluster_count`. Sensitive clusters get
/// two-sided geometric noise, clamped at zero; draws happen in ascending
/// cluster order from a generator seeded with `seed`.
pub fn noisy_cluster_counts(
    store: &LogStore,
    policy: &DelegationPolicy,
    cluster_count: usize,
    seed: u64,
) -> BTreeMap<usize, ClusterCount> {
    let mut exact = vec![0u64; cluster_count];
    for e in store.entries() {
        if e.cluster < cluster_count {
            exact[e.cluster] += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    exact
        .into_iter()
        .enumerate()
        .map(|(c, n)| {
            if policy.sensitive_clusters.contains(&c) {
                let noise = two_sided_geometric(policy.noise_epsilon, &mut rng);
                let count = (n as i64 + noise).max(0) as u64;
                (c, ClusterCount { count, noised: true })
            } else {
                (c, ClusterCount { count: n, noised: false })
            }
        })
        .collect()
}
