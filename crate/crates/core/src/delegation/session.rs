use serde::{Deserialize, Serialize};

use crate::tasktyping::TypeAssignment;

use super::cue::AwarenessCue;
use super::policy::Safeguard;
use super::DelegationError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionStatus {
    Typed,
    Confirmed,
    Executed,
    Repaired,
    Closed,
}

impl SessionStatus {
    pub fn label(self) -> &'static str {
        match self {
            SessionStatus::Typed => "TYPED",
            SessionStatus::Confirmed => "CONFIRMED",
            SessionStatus::Executed => "EXECUTED",
            SessionStatus::Repaired => "REPAIRED",
            SessionStatus::Closed => "CLOSED",
        }
    }

    /// Edges of the user-facing chain TYPED→CONFIRMED→EXECUTED→{REPAIRED→}CLOSED.
    pub fn can_advance_to(self, next: SessionStatus) -> bool {
        use SessionStatus::*;
        matches!(
            (self, next),
            (Typed, Confirmed) | (Confirmed, Executed) | (Executed, Repaired) | (Executed, Closed) | (Repaired, Closed)
        )
    }

    /// Still waiting on the user (nothing executed yet).
    pub fn is_open(self) -> bool {
        matches!(self, SessionStatus::Typed | SessionStatus::Confirmed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clarification {
    pub question: String,
    pub answer: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputRole {
    Primary,
    Auditor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutput {
    pub role: OutputRole,
    pub model: String,
    pub text: String,
}

/// One live delegation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegationSession {
    pub session_id: String,
    pub prompt_text: String,
    pub proposed: TypeAssignment,
    pub proposed_label: String,
    pub confirmed_cluster: Option<usize>,
    /// True only when the user picked a cluster other than the proposal.
    pub overridden: bool,
    pub primary_model: Option<String>,
    pub auditor_model: Option<String>,
    /// d_ĉ; `None` when the artifact has no tie evidence for the cluster.
    pub risk_value: Option<f64>,
    pub high_assurance: bool,
    pub active_safeguards: Vec<Safeguard>,
    pub awareness_cue: Option<AwarenessCue>,
    pub status: SessionStatus,
    pub clarification: Option<Clarification>,
    pub outputs: Vec<ExecutionOutput>,
    pub audit_note: Option<String>,
    pub repair_or_handoff_note: Option<String>,
    /// Keep the prompt (and session id) in the accountability entry.
    pub retain_prompt: bool,
    pub log_entry_id: Option<u64>,
    pub task_model_version: String,
    /// Every status the session has held, in order.
    pub history: Vec<SessionStatus>,
}

impl DelegationSession {
    pub(crate) fn advance(&mut self, op: &'static str, next: SessionStatus) -> Result<(), DelegationError> {
        if !self.status.can_advance_to(next) {
            return Err(DelegationError::InvalidTransition {
                op,
                status: self.status,
            });
        }
        self.status = next;
        self.history.push(next);
        Ok(())
    }

    pub(crate) fn require(&self, op: &'static str, status: SessionStatus) -> Result<(), DelegationError> {
        if self.status != status {
            return Err(DelegationError::InvalidTransition {
                op,
                status: self.status,
            });
        }
        Ok(())
    }

    pub fn is_routed(&self) -> bool {
        self.primary_model.is_some()
    }

    /// Structural invariants that must hold after every operation.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.auditor_model.is_some() != (self.is_routed() && self.high_assurance) {
            return Err("auditor present iff high assurance".into());
        }
        if let (Some(a), Some(p)) = (&self.auditor_model, &self.primary_model) {
            if a == p {
                return Err("auditor equals primary".into());
            }
        }
        if !self.high_assurance && !self.active_safeguards.is_empty() {
            return Err("safeguards active outside high assurance".into());
        }
        if self.history.last() != Some(&self.status) {
            return Err("history out of sync with status".into());
        }
        if self.history.first() != Some(&SessionStatus::Typed) {
            return Err("history must start at TYPED".into());
        }
        if self.status != SessionStatus::Typed && self.confirmed_cluster.is_none() && self.history.contains(&SessionStatus::Confirmed) {
            return Err("confirmed without a cluster".into());
        }
        if self.history.contains(&SessionStatus::Executed) && self.outputs.is_empty() && self.repair_or_handoff_note.is_none() {
            return Err("executed without output or handoff note".into());
        }
        Ok(())
    }
}
