//! Feature builders for the winner-classification and difficulty probes.

use std::collections::HashMap;
use std::ops::Range;

use crate::ingest::{ComparisonRecord, Outcome};

use super::ProbeError;

/// Sorted model ids and their one-hot positions.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelIndex {
    ids: Vec<String>,
    positions: HashMap<String, usize>,
}

impl ModelIndex {
    pub fn new<I: IntoIterator<Item = String>>(ids: I) -> Self {
        let mut ids: Vec<String> = ids.into_iter().collect();
        ids.sort();
        ids.dedup();
        let positions = ids.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        ModelIndex { ids, positions }
    }

    pub fn from_records(records: &[ComparisonRecord]) -> Self {
        Self::new(
            records
                .iter()
                .flat_map(|r| [r.model_a.clone(), r.model_b.clone()]),
        )
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn position(&self, model: &str) -> Option<usize> {
        self.positions.get(model).copied()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// Block layout `[model_a one-hot | model_b one-hot | cluster one-hot | e_diff]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutA {
    pub models: usize,
    pub clusters: usize,
    pub diff: usize,
}

impl LayoutA {
    pub fn width(&self) -> usize {
        2 * self.models + self.clusters + self.diff
    }

    pub fn cluster_block(&self) -> Range<usize> {
        2 * self.models..2 * self.models + self.clusters
    }
}

/// Block layout `[cluster one-hot | 5 outcome indicators | prompt length]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayoutB {
    pub clusters: usize,
}

impl LayoutB {
    pub const OUTCOME_INDICATORS: usize = 5;

    pub fn width(&self) -> usize {
        self.clusters + Self::OUTCOME_INDICATORS + 1
    }

    pub fn cluster_block(&self) -> Range<usize> {
        0..self.clusters
    }
}

pub fn build_features_a(
    record: &ComparisonRecord,
    models: &ModelIndex,
    cluster: usize,
    cluster_count: usize,
) -> Result<Vec<f64>, ProbeError> {
    let diff = record
        .response_embedding_diff
        .as_ref()
        .ok_or_else(|| ProbeError::MissingEmbeddingDiff(record.record_id.clone()))?;
    if cluster >= cluster_count {
        return Err(ProbeError::BadCluster {
            cluster,
            cluster_count,
        });
    }
    let a = models
        .position(&record.model_a)
        .ok_or_else(|| ProbeError::UnknownModel(record.model_a.clone()))?;
    let b = models
        .position(&record.model_b)
        .ok_or_else(|| ProbeError::UnknownModel(record.model_b.clone()))?;
    let layout = LayoutA {
        models: models.len(),
        clusters: cluster_count,
        diff: diff.len(),
    };
    let mut v = vec![0.0; layout.width()];
    v[a] = 1.0;
    v[models.len() + b] = 1.0;
    v[layout.cluster_block().start + cluster] = 1.0;
    v[layout.cluster_block().end..].copy_from_slice(diff);
    Ok(v)
}

pub fn build_features_b(
    record: &ComparisonRecord,
    cluster: usize,
    cluster_count: usize,
) -> Result<Vec<f64>, ProbeError> {
    if cluster >= cluster_count {
        return Err(ProbeError::BadCluster {
            cluster,
            cluster_count,
        });
    }
    let layout = LayoutB {
        clusters: cluster_count,
    };
    let mut v = vec![0.0; layout.width()];
    v[cluster] = 1.0;
    v[cluster_count + record.outcome.index()] = 1.0;
    v[layout.width() - 1] = record.prompt_length as f64;
    Ok(v)
}

/// Class label for winner classification: A wins, B wins, tie (either kind),
/// invalid.
pub fn task_a_class(outcome: Outcome) -> usize {
    match outcome {
        Outcome::AWins => 0,
        Outcome::BWins => 1,
        Outcome::Tie | Outcome::TieBothBad => 2,
        Outcome::Invalid => 3,
    }
}
