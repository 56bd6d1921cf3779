//! Brute-force counters written against the raw wire labels, sharing no code
//! with the library's aggregation.

use std::collections::{BTreeMap, BTreeSet};

/// One comparison as it appears on the wire, plus its cluster.
#[derive(Debug, Clone)]
pub struct RawVote {
    pub model_a: String,
    pub model_b: String,
    pub winner: String,
    pub cluster: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counts {
    /// (model, cluster) → (wins, support); zero-support pairs absent.
    pub win: BTreeMap<(String, usize), (u64, u64)>,
    /// cluster → (ties, support); zero-support clusters absent.
    pub tie: BTreeMap<usize, (u64, u64)>,
    /// model → (wins, support).
    pub global: BTreeMap<String, (u64, u64)>,
}

fn counts_toward_wins(v: &RawVote, include_invalid: bool) -> bool {
    v.winner != "invalid" || include_invalid
}

fn won(v: &RawVote, model: &str) -> bool {
    (v.winner == "model_a" && v.model_a == model) || (v.winner == "model_b" && v.model_b == model)
}

/// Rescan every vote once per (model, cluster) pair and once per cluster.
pub fn brute_force(votes: &[RawVote], include_invalid: bool) -> Counts {
    let models: BTreeSet<&str> = votes
        .iter()
        .flat_map(|v| [v.model_a.as_str(), v.model_b.as_str()])
        .collect();
    let clusters: BTreeSet<usize> = votes.iter().map(|v| v.cluster).collect();
    let mut out = Counts::default();
    for &m in &models {
        for &c in &clusters {
            let (mut wins, mut support) = (0, 0);
            for v in votes {
                if v.cluster != c || (v.model_a != m && v.model_b != m) || !counts_toward_wins(v, include_invalid) {
                    continue;
                }
                support += 1;
                wins += u64::from(won(v, m));
            }
            if support > 0 {
                out.win.insert((m.to_string(), c), (wins, support));
            }
        }
        let (mut wins, mut support) = (0, 0);
        for v in votes {
            if (v.model_a == m || v.model_b == m) && counts_toward_wins(v, include_invalid) {
                support += 1;
                wins += u64::from(won(v, m));
            }
        }
        if support > 0 {
            out.global.insert(m.to_string(), (wins, support));
        }
    }
    for &c in &clusters {
        let (mut ties, mut support) = (0, 0);
        for v in votes {
            if v.cluster != c || v.winner == "invalid" {
                continue;
            }
            support += 1;
            ties += u64::from(v.winner == "tie" || v.winner == "tie (bothbad)");
        }
        if support > 0 {
            out.tie.insert(c, (ties, support));
        }
    }
    out
}

/// Read the 200-record fixture as raw votes (the `cluster` field is extra to
/// the wire schema and ignored by the library's parser).
pub fn fixture_votes(text: &str) -> Vec<RawVote> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).expect("fixture line is JSON");
            RawVote {
                model_a: v["model_a"].as_str().unwrap().to_string(),
                model_b: v["model_b"].as_str().unwrap().to_string(),
                winner: v["winner"].as_str().unwrap().to_string(),
                cluster: v["cluster"].as_u64().unwrap() as usize,
            }
        })
        .collect()
}

pub const SIGNALS_FIXTURE: &str = include_str!("../fixtures/signals_200.jsonl");

/// Reference routing: models ranked by win rate (cross-multiplied, no
/// floating point), then support, then id; entries below `min_support`
/// ignored, falling back to the global table when none remain.
pub fn reference_ranking(
    win: &BTreeMap<(String, usize), (u64, u64)>,
    global: &BTreeMap<String, (u64, u64)>,
    cluster: usize,
    min_support: u64,
) -> Vec<String> {
    let mut local: Vec<(String, u64, u64)> = win
        .iter()
        .filter(|((_, c), (_, s))| *c == cluster && *s >= min_support.max(1))
        .map(|((m, _), &(h, s))| (m.clone(), h, s))
        .collect();
    if local.is_empty() {
        local = global
            .iter()
            .filter(|(_, (_, s))| *s >= 1)
            .map(|(m, &(h, s))| (m.clone(), h, s))
            .collect();
    }
    // Selection sort with an explicit "beats" relation.
    let beats = |a: &(String, u64, u64), b: &(String, u64, u64)| {
        let lhs = u128::from(a.1) * u128::from(b.2);
        let rhs = u128::from(b.1) * u128::from(a.2);
        lhs > rhs || (lhs == rhs && (a.2 > b.2 || (a.2 == b.2 && a.0 < b.0)))
    };
    let mut out = Vec::new();
    while !local.is_empty() {
        let mut best = 0;
        for i in 1..local.len() {
            if beats(&local[i], &local[best]) {
                best = i;
            }
        }
        out.push(local.remove(best).0);
    }
    out
}

/// Whether the rate `hits / support` exceeds `tau`. The rate is the
/// correctly rounded quotient, as stored and displayed, so a threshold set to
/// some cluster's own rate does not flag that cluster.
pub fn rate_exceeds(hits: u64, support: u64, tau: f64) -> bool {
    hits as f64 / support as f64 > tau
}
