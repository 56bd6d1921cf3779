//! Capability profiles (per-cluster win rates) and coordination-risk cues
//! (per-cluster tie rates).
//!
//! Everything is stored as integer counts; rates are derived on demand so that
//! artifacts merge and round-trip exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{ComparisonRecord, Outcome};

pub const SIGNALS_SCHEMA_VERSION: &str = "1";

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("{records} records but {clusters} cluster labels")]
    Misaligned { records: usize, clusters: usize },
    #[error("signal artifact schema version {found:?} is not supported (expected {expected:?})")]
    VersionMismatch { found: String, expected: String },
    #[error("corrupted signal artifact: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Hits (wins or ties) out of `support` comparisons.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub hits: u64,
    pub support: u64,
}

impl Tally {
    /// `hits / support`; callers never hold zero-support tallies.
    pub fn rate(&self) -> f64 {
        self.hits as f64 / self.support as f64
    }

    fn add(&mut self, other: Tally) {
        self.hits += other.hits;
        self.support += other.support;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalConfig {
    /// Count INVALID votes in win-rate denominators. They never count toward
    /// tie rates.
    #[serde(default)]
    pub include_invalid_in_win_support: bool,
}

pub type WinTable = BTreeMap<(String, usize), Tally>;
pub type TieTable = BTreeMap<usize, Tally>;
pub type GlobalTable = BTreeMap<String, Tally>;

fn check_aligned(records: &[ComparisonRecord], clusters: &[usize]) -> Result<(), SignalError> {
    if records.len() != clusters.len() {
        return Err(SignalError::Misaligned {
            records: records.len(),
            clusters: clusters.len(),
        });
    }
    Ok(())
}

fn winner(r: &ComparisonRecord) -> Option<&str> {
    match r.outcome {
        Outcome::AWins => Some(&r.model_a),
        Outcome::BWins => Some(&r.model_b),
        _ => None,
    }
}

fn participates_in_win(r: &ComparisonRecord, config: SignalConfig) -> bool {
    r.outcome != Outcome::Invalid || config.include_invalid_in_win_support
}

/// Win counts per (model, cluster). Pairs without support are absent.
pub fn compute_win_rates(
    records: &[ComparisonRecord],
    clusters: &[usize],
    config: SignalConfig,
) -> Result<WinTable, SignalError> {
    check_aligned(records, clusters)?;
    let mut table = WinTable::new();
    for (r, &c) in records.iter().zip(clusters) {
        if !participates_in_win(r, config) {
            continue;
        }
        let w = winner(r);
        for m in [&r.model_a, &r.model_b] {
            let t = table.entry((m.clone(), c)).or_default();
            t.support += 1;
            if w == Some(m.as_str()) {
                t.hits += 1;
            }
        }
    }
    Ok(table)
}

/// Tie counts per cluster; TIE and TIE_BOTH_BAD are ties, INVALID is excluded.
pub fn compute_tie_rates(
    records: &[ComparisonRecord],
    clusters: &[usize],
) -> Result<TieTable, SignalError> {
    check_aligned(records, clusters)?;
    let mut table = TieTable::new();
    for (r, &c) in records.iter().zip(clusters) {
        if r.outcome == Outcome::Invalid {
            continue;
        }
        let t = table.entry(c).or_default();
        t.support += 1;
        if r.outcome.is_tie() {
            t.hits += 1;
        }
    }
    Ok(table)
}

/// Win counts per model over all clusters.
pub fn compute_global_win_rates(records: &[ComparisonRecord], config: SignalConfig) -> GlobalTable {
    let mut table = GlobalTable::new();
    for r in records.iter().filter(|r| participates_in_win(r, config)) {
        let w = winner(r);
        for m in [&r.model_a, &r.model_b] {
            let t = table.entry(m.clone()).or_default();
            t.support += 1;
            if w == Some(m.as_str()) {
                t.hits += 1;
            }
        }
    }
    table
}

/// Versioned capability-profile and risk-cue counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignalArtifact {
    pub win: WinTable,
    pub tie: TieTable,
    pub global: GlobalTable,
    pub task_model_version: String,
    /// Unix seconds.
    pub created_at: u64,
    pub config: SignalConfig,
}

impl SignalArtifact {
    pub fn build(
        records: &[ComparisonRecord],
        clusters: &[usize],
        task_model_version: impl Into<String>,
        created_at: u64,
        config: SignalConfig,
    ) -> Result<Self, SignalError> {
        Ok(SignalArtifact {
            win: compute_win_rates(records, clusters, config)?,
            tie: compute_tie_rates(records, clusters)?,
            global: compute_global_win_rates(records, config),
            task_model_version: task_model_version.into(),
            created_at,
            config,
        })
    }

    /// Add another artifact's counts (same task model and config).
    pub fn merge(&mut self, other: &SignalArtifact) {
        for (k, t) in &other.win {
            self.win.entry(k.clone()).or_default().add(*t);
        }
        for (k, t) in &other.tie {
            self.tie.entry(*k).or_default().add(*t);
        }
        for (k, t) in &other.global {
            self.global.entry(k.clone()).or_default().add(*t);
        }
    }

    pub fn win_tally(&self, model: &str, cluster: usize) -> Option<Tally> {
        self.win.get(&(model.to_string(), cluster)).copied()
    }

    pub fn win_rate(&self, model: &str, cluster: usize) -> Option<f64> {
        self.win_tally(model, cluster).map(|t| t.rate())
    }

    pub fn tie_tally(&self, cluster: usize) -> Option<Tally> {
        self.tie.get(&cluster).copied()
    }

    pub fn tie_rate(&self, cluster: usize) -> Option<f64> {
        self.tie_tally(cluster).map(|t| t.rate())
    }

    pub fn global_rate(&self, model: &str) -> Option<f64> {
        self.global.get(model).map(Tally::rate)
    }

    /// All models with any support, sorted.
    pub fn models(&self) -> Vec<String> {
        self.global.keys().cloned().collect()
    }

    /// `(model, tally)` for every model with support in `cluster`.
    pub fn profile(&self, cluster: usize) -> Vec<(String, Tally)> {
        self.win
            .iter()
            .filter(|((_, c), _)| *c == cluster)
            .map(|((m, _), t)| (m.clone(), *t))
            .collect()
    }

    fn to_file(&self) -> SignalFile {
        SignalFile {
            schema_version: SIGNALS_SCHEMA_VERSION.to_string(),
            task_model_version: self.task_model_version.clone(),
            created_at: self.created_at,
            win: self
                .win
                .iter()
                .map(|((m, c), t)| WinRow {
                    model: m.clone(),
                    cluster: *c,
                    wins: t.hits,
                    support: t.support,
                })
                .collect(),
            tie: self
                .tie
                .iter()
                .map(|(c, t)| TieRow {
                    cluster: *c,
                    ties: t.hits,
                    support: t.support,
                })
                .collect(),
            global: self
                .global
                .iter()
                .map(|(m, t)| GlobalRow {
                    model: m.clone(),
                    wins: t.hits,
                    support: t.support,
                })
                .collect(),
            config_flags: self.config,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("signal artifact serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, SignalError> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| SignalError::Corrupt(e.to_string()))?;
        let found = raw
            .get("schema_version")
            .and_then(|v| v.as_str())
            .unwrap_or_default();
        if found != SIGNALS_SCHEMA_VERSION {
            return Err(SignalError::VersionMismatch {
                found: found.to_string(),
                expected: SIGNALS_SCHEMA_VERSION.to_string(),
            });
        }
        let f: SignalFile =
            serde_json::from_value(raw).map_err(|e| SignalError::Corrupt(e.to_string()))?;
        let check = |hits: u64, support: u64| {
            if support == 0 || hits > support {
                Err(SignalError::Corrupt(format!(
                    "count {hits} out of support {support}"
                )))
            } else {
                Ok(Tally { hits, support })
            }
        };
        let mut win = WinTable::new();
        for r in f.win {
            win.insert((r.model, r.cluster), check(r.wins, r.support)?);
        }
        let mut tie = TieTable::new();
        for r in f.tie {
            tie.insert(r.cluster, check(r.ties, r.support)?);
        }
        let mut global = GlobalTable::new();
        for r in f.global {
            global.insert(r.model, check(r.wins, r.support)?);
        }
        Ok(SignalArtifact {
            win,
            tie,
            global,
            task_model_version: f.task_model_version,
            created_at: f.created_at,
            config: f.config_flags,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SignalError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SignalError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct WinRow {
    model: String,
    cluster: usize,
    wins: u64,
    support: u64,
}

#[derive(Serialize, Deserialize)]
struct TieRow {
    cluster: usize,
    ties: u64,
    support: u64,
}

#[derive(Serialize, Deserialize)]
struct GlobalRow {
    model: String,
    wins: u64,
    support: u64,
}

#[derive(Serialize, Deserialize)]
struct SignalFile {
    schema_version: String,
    task_model_version: String,
    created_at: u64,
    win: Vec<WinRow>,
    tie: Vec<TieRow>,
    global: Vec<GlobalRow>,
    config_flags: SignalConfig,
}
