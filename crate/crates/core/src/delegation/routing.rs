//! Capability-argmax routing with a deterministic tie-break chain.

use std::cmp::Ordering;

use crate::signals::{SignalArtifact, Tally};

use super::cue::RateSource;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub model: String,
    pub rate: f64,
    pub tally: Tally,
}

/// Higher rate, then higher support, then lexicographically smaller id.
pub fn compare_candidates(a: &Candidate, b: &Candidate) -> Ordering {
    b.rate
        .total_cmp(&a.rate)
        .then(b.tally.support.cmp(&a.tally.support))
        .then(a.model.cmp(&b.model))
}

pub fn rank(mut candidates: Vec<Candidate>) -> Vec<Candidate> {
    candidates.sort_by(compare_candidates);
    candidates
}

fn candidates<'a>(entries: impl Iterator<Item = (&'a String, Tally)>, min_support: u64) -> Vec<Candidate> {
    entries
        .filter(|(_, t)| t.support >= min_support.max(1))
        .map(|(m, t)| Candidate {
            model: m.clone(),
            rate: t.rate(),
            tally: t,
        })
        .collect()
}

/// Ranked models for `cluster`, or the global ranking when no model reaches
/// `min_support` there.
pub fn ranking_for(signals: &SignalArtifact, cluster: usize, min_support: u64) -> (Vec<Candidate>, RateSource) {
    let local = candidates(
        signals
            .win
            .iter()
            .filter(|((_, c), _)| *c == cluster)
            .map(|((m, _), t)| (m, *t)),
        min_support,
    );
    if !local.is_empty() {
        return (rank(local), RateSource::Cluster);
    }
    (global_ranking(signals), RateSource::GlobalFallback)
}

pub fn global_ranking(signals: &SignalArtifact) -> Vec<Candidate> {
    rank(candidates(signals.global.iter().map(|(m, t)| (m, *t)), 1))
}
