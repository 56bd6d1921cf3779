//! Online delegation protocol: type and verify, route by capability, raise
//! safeguards on risky task types, explain the decision, execute, and keep a
//! minimized accountability log.

pub mod cue;
pub mod executor;
pub mod log_store;
pub mod noise;
pub mod policy;
pub mod routing;
pub mod session;

use std::sync::Arc;

use thiserror::Error;

use crate::signals::SignalArtifact;
use crate::tasktyping::{TaskTypeModel, TaskTypingError};

pub use cue::{AwarenessCue, RateSource, RateWithSupport, LIMITATIONS_TEXT};
pub use executor::{Executor, ExecutorError, FailingExecutor, HttpExecutor, HttpExecutorConfig, MockExecutor};
pub use log_store::{AccountabilityEntry, Clock, LogError, LogItem, LogPage, LogStore, ManualClock, SystemClock, Tombstone};
pub use noise::{noisy_cluster_counts, ClusterCount};
pub use policy::{default_tau, DelegationPolicy, PolicyConfig, Safeguard};
pub use session::{Clarification, DelegationSession, ExecutionOutput, OutputRole, SessionStatus};

use cue::{build_cue, CueInput};
use routing::{global_ranking, ranking_for};

#[derive(Debug, Error)]
pub enum DelegationError {
    #[error("signal artifact was built for task model {signals}, loaded task model is {task_model}")]
    VersionMismatch { task_model: String, signals: String },
    #[error(transparent)]
    TaskTyping(#[from] TaskTypingError),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("cannot {op} a session in status {}", .status.label())]
    InvalidTransition { op: &'static str, status: SessionStatus },
    #[error("cluster {cluster} does not exist (model has {cluster_count})")]
    UnknownCluster { cluster: usize, cluster_count: usize },
    #[error("cluster {cluster} was merged into cluster {surviving}; choose {surviving} instead")]
    RetiredCluster { cluster: usize, surviving: usize },
    #[error("session is not routed yet")]
    NotRouted,
    #[error("session is already routed")]
    AlreadyRouted,
    #[error("the one clarifying question for this session has already been asked")]
    ClarificationBudget,
    #[error("clarification is only available in high-assurance mode")]
    NotHighAssurance,
    #[error("clarification is not an active safeguard")]
    ClarifyNotActive,
    #[error("no clarifying question is awaiting an answer")]
    NoPendingQuestion,
    #[error("no model has any recorded comparisons")]
    NoModels,
    #[error("no second model is available to audit {primary}")]
    NoAuditor { primary: String },
    #[error("session already has log entry {0}")]
    AlreadyLogged(u64),
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error(transparent)]
    Log(#[from] LogError),
}

pub fn check_versions(task_model: &TaskTypeModel, signals: &SignalArtifact) -> Result<(), DelegationError> {
    let tm = task_model.version();
    if tm != signals.task_model_version {
        return Err(DelegationError::VersionMismatch {
            task_model: tm,
            signals: signals.task_model_version.clone(),
        });
    }
    Ok(())
}

/// Type the prompt and open a session in TYPED. Nothing is routed yet.
pub fn open_session(
    session_id: impl Into<String>,
    prompt: &str,
    task_model: &TaskTypeModel,
    signals: &SignalArtifact,
    policy: &DelegationPolicy,
) -> Result<DelegationSession, DelegationError> {
    check_versions(task_model, signals)?;
    let proposed = task_model.assign(prompt, &task_model.embedder)?;
    Ok(DelegationSession {
        session_id: session_id.into(),
        prompt_text: prompt.to_string(),
        proposed_label: task_model.labels[proposed.cluster].clone(),
        proposed,
        confirmed_cluster: None,
        overridden: false,
        primary_model: None,
        auditor_model: None,
        risk_value: None,
        high_assurance: false,
        active_safeguards: Vec::new(),
        awareness_cue: None,
        status: SessionStatus::Typed,
        clarification: None,
        outputs: Vec::new(),
        audit_note: None,
        repair_or_handoff_note: None,
        retain_prompt: policy.retain_prompts,
        log_entry_id: None,
        task_model_version: task_model.version(),
        history: vec![SessionStatus::Typed],
    })
}

/// Accept the proposed cluster.
pub fn confirm(session: &mut DelegationSession) -> Result<(), DelegationError> {
    session.advance("confirm", SessionStatus::Confirmed)?;
    session.confirmed_cluster = Some(session.proposed.cluster);
    session.overridden = false;
    Ok(())
}

/// Replace the proposal with a user-chosen surviving cluster.
pub fn override_cluster(
    session: &mut DelegationSession,
    cluster: usize,
    task_model: &TaskTypeModel,
) -> Result<(), DelegationError> {
    session.require("override", SessionStatus::Typed)?;
    match task_model.resolve(cluster) {
        None => {
            return Err(DelegationError::UnknownCluster {
                cluster,
                cluster_count: task_model.cluster_count(),
            })
        }
        Some(target) if target != cluster => {
            return Err(DelegationError::RetiredCluster {
                cluster,
                surviving: target,
            })
        }
        Some(_) => {}
    }
    session.advance("override", SessionStatus::Confirmed)?;
    session.confirmed_cluster = Some(cluster);
    session.overridden = cluster != session.proposed.cluster;
    Ok(())
}

/// Pick the primary (and, above τ, the auditor and safeguards) for the
/// confirmed cluster, and build the awareness cue.
pub fn route(
    session: &mut DelegationSession,
    task_model: &TaskTypeModel,
    signals: &SignalArtifact,
    policy: &DelegationPolicy,
) -> Result<(), DelegationError> {
    session.require("route", SessionStatus::Confirmed)?;
    if session.is_routed() {
        return Err(DelegationError::AlreadyRouted);
    }
    let cluster = session.confirmed_cluster.expect("confirmed sessions carry a cluster");
    let (ranking, source) = ranking_for(signals, cluster, policy.min_support);
    let primary = ranking.first().ok_or(DelegationError::NoModels)?.clone();

    let risk = signals.tie_tally(cluster).filter(|t| t.support > 0);
    let high_assurance = risk.is_none_or(|t| t.rate() > policy.tau);

    let runner_up = match ranking.get(1) {
        Some(c) => Some(c.clone()),
        None => global_ranking(signals).into_iter().find(|c| c.model != primary.model),
    };
    let auditor = if high_assurance {
        Some(runner_up.clone().ok_or_else(|| DelegationError::NoAuditor {
            primary: primary.model.clone(),
        })?)
    } else {
        None
    };
    let safeguards = if high_assurance {
        policy.safeguards.clone()
    } else {
        Vec::new()
    };

    let label = task_model.labels.get(cluster).cloned().unwrap_or_default();
    let cue = build_cue(CueInput {
        cluster,
        cluster_label: &label,
        chosen: (&primary.model, primary.tally.into()),
        runner_up: runner_up.as_ref().map(|c| (c.model.as_str(), c.tally.into())),
        risk: risk.map(Into::into),
        tau: policy.tau,
        high_assurance,
        rate_source: source,
        safeguards: &safeguards,
        auditor: auditor.as_ref().map(|c| c.model.as_str()),
        min_support: policy.min_support,
    });

    session.primary_model = Some(primary.model);
    session.auditor_model = auditor.map(|c| c.model);
    session.risk_value = risk.map(|t| t.rate());
    session.high_assurance = high_assurance;
    session.active_safeguards = safeguards;
    session.awareness_cue = Some(cue);
    Ok(())
}

/// The single templated clarifying question allowed per session.
pub fn pose_clarification(session: &mut DelegationSession, task_model: &TaskTypeModel) -> Result<String, DelegationError> {
    if session.clarification.is_some() {
        return Err(DelegationError::ClarificationBudget);
    }
    session.require("clarify", SessionStatus::Confirmed)?;
    if !session.is_routed() {
        return Err(DelegationError::NotRouted);
    }
    if !session.high_assurance {
        return Err(DelegationError::NotHighAssurance);
    }
    if !session.active_safeguards.contains(&Safeguard::ClarifyOnce) {
        return Err(DelegationError::ClarifyNotActive);
    }
    let cluster = session.confirmed_cluster.expect("routed sessions are confirmed");
    let label = task_model.labels.get(cluster).map_or("this task type", String::as_str);
    let confidence = if session.overridden {
        "you chose it".to_string()
    } else {
        format!("confidence {:.2}", session.proposed.confidence)
    };
    let question = format!(
        "Your request was typed as \"{label}\" ({confidence}). Models often disagree on this kind of task: \
what exact result do you need, and what should the answer avoid?"
    );
    session.clarification = Some(Clarification {
        question: question.clone(),
        answer: None,
    });
    Ok(question)
}

pub fn answer_clarification(session: &mut DelegationSession, answer: &str) -> Result<(), DelegationError> {
    session.require("answer", SessionStatus::Confirmed)?;
    match session.clarification.as_mut() {
        Some(c) if c.answer.is_none() => {
            c.answer = Some(answer.to_string());
            Ok(())
        }
        _ => Err(DelegationError::NoPendingQuestion),
    }
}

/// Prompt handed to the primary executor: the request, the clarification
/// exchange if any, and the instruction-style safeguards.
pub fn executor_prompt(session: &DelegationSession) -> String {
    let mut p = session.prompt_text.clone();
    if let Some(Clarification {
        question,
        answer: Some(answer),
    }) = &session.clarification
    {
        p.push_str(&format!("\n\nClarification asked: {question}\nUser answer: {answer}"));
    }
    for s in &session.active_safeguards {
        if let Some(i) = s.instruction() {
            p.push_str("\n\n");
            p.push_str(i);
        }
    }
    p
}

fn audit_prompt(session: &DelegationSession, primary: &str, output: &str) -> String {
    format!(
        "Check the answer below for errors and say whether it can be trusted.\n\nRequest:\n{}\n\nAnswer from {primary}:\n{output}",
        session.prompt_text
    )
}

/// Run the primary (and the auditor when AUDIT is active). An executor
/// failure on the primary moves the session through EXECUTED to REPAIRED with
/// a handoff note and returns the error; a failed audit keeps the primary
/// output and also lands in REPAIRED.
pub fn execute(session: &mut DelegationSession, executor: &dyn Executor) -> Result<(), DelegationError> {
    session.require("execute", SessionStatus::Confirmed)?;
    let primary = session.primary_model.clone().ok_or(DelegationError::NotRouted)?;
    let prompt = executor_prompt(session);
    match executor.execute(&primary, &prompt) {
        Err(e) => {
            session.advance("execute", SessionStatus::Executed)?;
            session.advance("repair", SessionStatus::Repaired)?;
            session.repair_or_handoff_note = Some(format!(
                "Primary model {primary} could not run ({e}); hand the request to a person or retry later."
            ));
            Err(e.into())
        }
        Ok(output) => {
            session.outputs.push(ExecutionOutput {
                role: OutputRole::Primary,
                model: primary.clone(),
                text: output.clone(),
            });
            session.advance("execute", SessionStatus::Executed)?;
            if let (Some(auditor), true) = (
                session.auditor_model.clone(),
                session.active_safeguards.contains(&Safeguard::Audit),
            ) {
                match executor.execute(&auditor, &audit_prompt(session, &primary, &output)) {
                    Ok(note) => {
                        session.outputs.push(ExecutionOutput {
                            role: OutputRole::Auditor,
                            model: auditor.clone(),
                            text: note.clone(),
                        });
                        session.audit_note = Some(format!("Audit by {auditor}: {note}"));
                    }
                    Err(e) => {
                        session.advance("repair", SessionStatus::Repaired)?;
                        session.repair_or_handoff_note = Some(format!(
                            "Auditor {auditor} could not run ({e}); the answer was not cross-checked."
                        ));
                    }
                }
            }
            Ok(())
        }
    }
}

fn entry_for(session: &DelegationSession) -> AccountabilityEntry {
    AccountabilityEntry {
        entry_id: 0,
        timestamp: 0,
        cluster: session.confirmed_cluster.unwrap_or(session.proposed.cluster),
        primary_model: session.primary_model.clone(),
        auditor_model: session.auditor_model.clone(),
        risk_value: session.risk_value,
        high_assurance: session.high_assurance,
        safeguards: session.active_safeguards.clone(),
        overridden: session.overridden,
        status: session.status,
        repair_or_handoff_note: session.repair_or_handoff_note.clone(),
        retained: session.retain_prompt,
        prompt_text: session.retain_prompt.then(|| session.prompt_text.clone()),
        session_id: session.retain_prompt.then(|| session.session_id.clone()),
    }
}

/// Record the finished session. Prompt text and session id are left out
/// unless the session opted into retention.
pub fn append_log(session: &mut DelegationSession, store: &mut LogStore) -> Result<AccountabilityEntry, DelegationError> {
    if !matches!(session.status, SessionStatus::Executed | SessionStatus::Repaired) {
        return Err(DelegationError::InvalidTransition {
            op: "log",
            status: session.status,
        });
    }
    if let Some(id) = session.log_entry_id {
        return Err(DelegationError::AlreadyLogged(id));
    }
    let entry = store.append(entry_for(session))?;
    session.log_entry_id = Some(entry.entry_id);
    Ok(entry)
}

pub fn close(session: &mut DelegationSession) -> Result<(), DelegationError> {
    session.advance("close", SessionStatus::Closed)
}

/// System edge for sessions cut off before execution (service shutdown):
/// TYPED or CONFIRMED → REPAIRED with a handoff note.
pub fn abandon(session: &mut DelegationSession, note: &str) -> Result<(), DelegationError> {
    if !session.status.is_open() {
        return Err(DelegationError::InvalidTransition {
            op: "abandon",
            status: session.status,
        });
    }
    session.status = SessionStatus::Repaired;
    session.history.push(SessionStatus::Repaired);
    session.repair_or_handoff_note = Some(note.to_string());
    Ok(())
}

/// System edge for idle sessions: TYPED or CONFIRMED → CLOSED with a note.
pub fn expire(session: &mut DelegationSession, note: &str) -> Result<(), DelegationError> {
    if !session.status.is_open() {
        return Err(DelegationError::InvalidTransition {
            op: "expire",
            status: session.status,
        });
    }
    session.status = SessionStatus::Closed;
    session.history.push(SessionStatus::Closed);
    session.repair_or_handoff_note = Some(note.to_string());
    Ok(())
}

pub fn forget(store: &mut LogStore, entry_id: u64) -> Result<Tombstone, DelegationError> {
    Ok(store.forget(entry_id)?)
}

/// Artifacts plus a frozen policy; chains the protocol steps the way the
/// service and the CLI drive them.
#[derive(Debug, Clone)]
pub struct DelegationEngine {
    task_model: Arc<TaskTypeModel>,
    signals: Arc<SignalArtifact>,
    policy: DelegationPolicy,
}

impl DelegationEngine {
    pub fn new(
        task_model: Arc<TaskTypeModel>,
        signals: Arc<SignalArtifact>,
        policy: DelegationPolicy,
    ) -> Result<Self, DelegationError> {
        check_versions(&task_model, &signals)?;
        policy.validate()?;
        Ok(DelegationEngine {
            task_model,
            signals,
            policy,
        })
    }

    pub fn task_model(&self) -> &Arc<TaskTypeModel> {
        &self.task_model
    }

    pub fn signals(&self) -> &Arc<SignalArtifact> {
        &self.signals
    }

    pub fn policy(&self) -> &DelegationPolicy {
        &self.policy
    }

    pub fn open(&self, session_id: impl Into<String>, prompt: &str, retain_prompt: Option<bool>) -> Result<DelegationSession, DelegationError> {
        let mut s = open_session(session_id, prompt, &self.task_model, &self.signals, &self.policy)?;
        if let Some(r) = retain_prompt {
            s.retain_prompt = r;
        }
        Ok(s)
    }

    fn route_and_maybe_ask(&self, session: &mut DelegationSession) -> Result<(), DelegationError> {
        route(session, &self.task_model, &self.signals, &self.policy)?;
        if session.high_assurance && session.active_safeguards.contains(&Safeguard::ClarifyOnce) {
            pose_clarification(session, &self.task_model)?;
        }
        Ok(())
    }

    /// Accept the proposal, route, and pose the clarifying question when the
    /// session is high-assurance.
    pub fn confirm(&self, session: &mut DelegationSession) -> Result<(), DelegationError> {
        confirm(session)?;
        self.route_and_maybe_ask(session)
    }

    pub fn override_cluster(&self, session: &mut DelegationSession, cluster: usize) -> Result<(), DelegationError> {
        override_cluster(session, cluster, &self.task_model)?;
        self.route_and_maybe_ask(session)
    }

    pub fn clarify(&self, session: &mut DelegationSession, answer: &str) -> Result<(), DelegationError> {
        answer_clarification(session, answer)
    }

    /// Execute, log, close. On executor failure the session is still logged
    /// and closed (its history shows REPAIRED) and the error is returned.
    pub fn execute(
        &self,
        session: &mut DelegationSession,
        executor: &dyn Executor,
        store: &mut LogStore,
    ) -> Result<AccountabilityEntry, DelegationError> {
        let result = execute(session, executor);
        if let Err(e) = &result {
            if !matches!(e, DelegationError::Executor(_)) {
                return Err(result.unwrap_err());
            }
        }
        let entry = append_log(session, store)?;
        close(session)?;
        result.map(|_| entry)
    }

    /// Shutdown path: move an open session to REPAIRED and log it.
    pub fn abandon(&self, session: &mut DelegationSession, note: &str, store: &mut LogStore) -> Result<AccountabilityEntry, DelegationError> {
        abandon(session, note)?;
        append_log(session, store)
    }
}
