use serde::{Deserialize, Serialize};

use crate::signals::Tally;

use super::policy::Safeguard;

/// A rate together with the counts it came from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateWithSupport {
    pub rate: f64,
    pub hits: u64,
    pub support: u64,
}

impl From<Tally> for RateWithSupport {
    fn from(t: Tally) -> Self {
        RateWithSupport {
            rate: t.rate(),
            hits: t.hits,
            support: t.support,
        }
    }
}

/// Where the routing rates came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    Cluster,
    /// No model met `min_support` in the cluster; global rates were used.
    GlobalFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwarenessCue {
    pub cluster: usize,
    pub cluster_label: String,
    pub chosen_model: String,
    pub chosen_model_win_rate: RateWithSupport,
    pub runner_up_model: Option<String>,
    pub runner_up_win_rate: Option<RateWithSupport>,
    pub risk_value: Option<RateWithSupport>,
    pub tau: f64,
    pub high_assurance: bool,
    pub rate_source: RateSource,
    pub strategy_text: String,
    pub limitations_text: String,
    pub notes: Vec<String>,
}

pub const LIMITATIONS_TEXT: &str = "These rates summarize past pairwise votes on similar prompts and may not \
hold for this request. A high tie rate means models and voters disagreed, not that the task is hard. \
The chosen model can still be wrong; check its answer.";

fn rate_phrase(r: &RateWithSupport) -> String {
    format!("{:.2} ({} of {})", r.rate, r.hits, r.support)
}

pub(crate) struct CueInput<'a> {
    pub cluster: usize,
    pub cluster_label: &'a str,
    pub chosen: (&'a str, RateWithSupport),
    pub runner_up: Option<(&'a str, RateWithSupport)>,
    pub risk: Option<RateWithSupport>,
    pub tau: f64,
    pub high_assurance: bool,
    pub rate_source: RateSource,
    pub safeguards: &'a [Safeguard],
    pub auditor: Option<&'a str>,
    pub min_support: u64,
}

pub(crate) fn build_cue(input: CueInput<'_>) -> AwarenessCue {
    let (chosen, chosen_rate) = input.chosen;
    let scope = match input.rate_source {
        RateSource::Cluster => format!("on \"{}\" prompts", input.cluster_label),
        RateSource::GlobalFallback => "across all prompts".to_string(),
    };
    let mut strategy = format!("Delegating to {chosen}, win rate {} {scope}. ", rate_phrase(&chosen_rate));
    match (&input.risk, input.high_assurance) {
        (Some(r), false) => strategy.push_str(&format!(
            "Tie rate {} is at or below the threshold {:.2}; no extra safeguards.",
            rate_phrase(r),
            input.tau
        )),
        (Some(r), true) => strategy.push_str(&format!(
            "Tie rate {} exceeds the threshold {:.2}, so high-assurance mode is on",
            rate_phrase(r),
            input.tau
        )),
        (None, _) => strategy.push_str("No tie-rate evidence exists for this task type, so high-assurance mode is on"),
    }
    if input.high_assurance {
        let list: Vec<String> = input
            .safeguards
            .iter()
            .map(|s| match (s, input.auditor) {
                (Safeguard::Audit, Some(a)) => format!("a cross-check by {a}"),
                _ => s.describe().to_string(),
            })
            .collect();
        strategy.push_str(&format!(": {}.", list.join("; ")));
    }

    let mut notes = Vec::new();
    if input.rate_source == RateSource::GlobalFallback {
        notes.push(format!(
            "No model has at least {} comparisons in this task type; routing used global win rates.",
            input.min_support
        ));
    }
    if input.risk.is_none() {
        notes.push("Tie rate missing for this task type; treated as high risk.".to_string());
    }

    AwarenessCue {
        cluster: input.cluster,
        cluster_label: input.cluster_label.to_string(),
        chosen_model: chosen.to_string(),
        chosen_model_win_rate: chosen_rate,
        runner_up_model: input.runner_up.map(|(m, _)| m.to_string()),
        runner_up_win_rate: input.runner_up.map(|(_, r)| r),
        risk_value: input.risk,
        tau: input.tau,
        high_assurance: input.high_assurance,
        rate_source: input.rate_source,
        strategy_text: strategy,
        limitations_text: LIMITATIONS_TEXT.to_string(),
        notes,
    }
}
