use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::signals::SignalArtifact;

use super::DelegationError;

/// High-assurance actions, applied in policy order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Safeguard {
    ClarifyOnce,
    Audit,
    CiteSources,
    StepwisePlan,
}

impl Safeguard {
    pub const ALL: [Safeguard; 4] = [
        Safeguard::ClarifyOnce,
        Safeguard::Audit,
        Safeguard::CiteSources,
        Safeguard::StepwisePlan,
    ];

    pub fn describe(self) -> &'static str {
        match self {
            Safeguard::ClarifyOnce => "one clarifying question",
            Safeguard::Audit => "a cross-check by a second model",
            Safeguard::CiteSources => "cited sources",
            Safeguard::StepwisePlan => "a stepwise plan",
        }
    }

    /// Instruction appended to the executor prompt, if any.
    pub fn instruction(self) -> Option<&'static str> {
        match self {
            Safeguard::CiteSources => Some("Cite the sources that support each claim."),
            Safeguard::StepwisePlan => Some("Lay out a numbered plan before answering, then follow it."),
            _ => None,
        }
    }
}

pub const DEFAULT_MIN_SUPPORT: u64 = 20;
pub const DEFAULT_NOISE_EPSILON: f64 = 1.0;
/// Percentile of the artifact's tie rates used when no τ is configured.
pub const DEFAULT_TAU_PERCENTILE: f64 = 75.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegationPolicy {
    pub tau: f64,
    pub min_support: u64,
    pub safeguards: Vec<Safeguard>,
    pub sensitive_clusters: BTreeSet<usize>,
    pub noise_epsilon: f64,
    /// Default for sessions that do not choose; prompts are dropped from log
    /// entries unless this (or the session's own flag) is set.
    pub retain_prompts: bool,
}

impl DelegationPolicy {
    pub fn validate(&self) -> Result<(), DelegationError> {
        let bad = |m: String| Err(DelegationError::InvalidPolicy(m));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1]", self.tau));
        }
        if self.min_support < 1 {
            return bad("min_support must be at least 1".into());
        }
        if self.safeguards.is_empty() {
            return bad("safeguard set must not be empty".into());
        }
        let distinct: BTreeSet<_> = self.safeguards.iter().collect();
        if distinct.len() != self.safeguards.len() {
            return bad("safeguards listed more than once".into());
        }
        if !(self.noise_epsilon > 0.0 && self.noise_epsilon.is_finite()) {
            return bad(format!("noise_epsilon must be positive, got {}", self.noise_epsilon));
        }
        Ok(())
    }

    pub fn is_active(&self, s: Safeguard) -> bool {
        self.safeguards.contains(&s)
    }
}

/// On-disk policy; a missing `tau` is filled from the signal artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "default_min_support")]
    pub min_support: u64,
    #[serde(default = "default_safeguards")]
    pub safeguards: Vec<Safeguard>,
    #[serde(default)]
    pub sensitive_clusters: BTreeSet<usize>,
    #[serde(default = "default_epsilon")]
    pub noise_epsilon: f64,
    #[serde(default)]
    pub retain_prompts: bool,
}

fn default_min_support() -> u64 {
    DEFAULT_MIN_SUPPORT
}

fn default_safeguards() -> Vec<Safeguard> {
    vec![Safeguard::ClarifyOnce, Safeguard::Audit, Safeguard::CiteSources]
}

fn default_epsilon() -> f64 {
    DEFAULT_NOISE_EPSILON
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            tau: None,
            min_support: DEFAULT_MIN_SUPPORT,
            safeguards: default_safeguards(),
            sensitive_clusters: BTreeSet::new(),
            noise_epsilon: DEFAULT_NOISE_EPSILON,
            retain_prompts: false,
        }
    }
}

impl PolicyConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DelegationError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| DelegationError::InvalidPolicy(format!("{}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text).map_err(|e| DelegationError::InvalidPolicy(e.to_string()))
    }

    /// Freeze into a policy, computing τ from `signals` when unset.
    pub fn resolve(&self, signals: &SignalArtifact) -> Result<DelegationPolicy, DelegationError> {
        let policy = DelegationPolicy {
            tau: self.tau.unwrap_or_else(|| default_tau(signals)),
            min_support: self.min_support,
            safeguards: self.safeguards.clone(),
            sensitive_clusters: self.sensitive_clusters.clone(),
            noise_epsilon: self.noise_epsilon,
            retain_prompts: self.retain_prompts,
        };
        policy.validate()?;
        Ok(policy)
    }
}

/// Percentile with linear interpolation between order statistics
/// (`rank = p/100 · (n−1)`). `None` for an empty sample.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = p / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    Some(v[lo] + (v[hi] - v[lo]) * (rank - lo as f64))
}

/// 75th percentile of the per-cluster tie rates; 0 when the artifact has none
/// (every session is then high-assurance through the missing-risk rule anyway).
pub fn default_tau(signals: &SignalArtifact) -> f64 {
    let rates: Vec<f64> = signals
        .tie
        .values()
        .filter(|t| t.support > 0)
        .map(|t| t.rate())
        .collect();
    percentile(&rates, DEFAULT_TAU_PERCENTILE).unwrap_or(0.0)
}
