//! Randomized session property suite. Every session gets a freshly drawn
//! world and a random sequence of user operations; invariants are checked
//! after each one against the reference oracles.

use std::sync::Arc;

use delegation_cues::delegation::{
    pose_clarification, DelegationError, DelegationSession, FailingExecutor, LogStore, ManualClock, MockExecutor,
    Safeguard, SessionStatus,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fixtures::{random_prompt, random_world, World};
use super::oracle::{rate_exceeds, reference_ranking};
use super::SuiteResult;
use crate::ensure;

#[derive(Debug, Default)]
pub struct Coverage {
    pub sessions: usize,
    pub routed: usize,
    pub high_assurance: usize,
    pub missing_risk: usize,
    pub tau_on_rate: usize,
    pub global_fallback: usize,
    pub clarified: usize,
    pub overrides: usize,
    pub rejected_ops: usize,
    pub executor_failures: usize,
    pub abandoned: usize,
    pub logged: usize,
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Confirm,
    Override(usize),
    Clarify,
    SecondQuestion,
    Execute { fail: bool },
    Abandon,
}

fn draw_op(rng: &mut ChaCha8Rng, k: usize) -> Op {
    match rng.random_range(0..12) {
        0..=2 => Op::Confirm,
        3..=4 => Op::Override(rng.random_range(0..=k)),
        5..=6 => Op::Clarify,
        7 => Op::SecondQuestion,
        8..=9 => Op::Execute { fail: false },
        10 => Op::Execute { fail: true },
        _ => Op::Abandon,
    }
}

/// Checks on a freshly routed session, against the oracles only.
fn check_routing(world: &World, s: &DelegationSession, cov: &mut Coverage) -> Result<(), String> {
    let cluster = s.confirmed_cluster.ok_or("routed without a cluster")?;
    let p = &world.policy;
    let win = world.win_counts();
    let global = world.global_counts();
    let expected = reference_ranking(&win, &global, cluster, p.min_support);
    let local_support = win
        .iter()
        .any(|((_, c), (_, sup))| *c == cluster && *sup >= p.min_support);
    if !local_support {
        cov.global_fallback += 1;
    }
    ensure!(
        s.primary_model.as_deref() == expected.first().map(String::as_str),
        "{}: primary {:?}, reference ranking {:?}",
        s.session_id,
        s.primary_model,
        expected
    );

    let risk = world.signals.tie.get(&cluster).filter(|t| t.support > 0);
    let risky = match risk {
        None => {
            cov.missing_risk += 1;
            true
        }
        Some(t) => {
            if t.hits as f64 / t.support as f64 == p.tau {
                cov.tau_on_rate += 1;
            }
            rate_exceeds(t.hits, t.support, p.tau)
        }
    };
    ensure!(
        s.high_assurance == risky,
        "{}: high assurance {} but oracle says {} (risk {:?}, tau {})",
        s.session_id,
        s.high_assurance,
        risky,
        risk,
        p.tau
    );
    ensure!(
        s.auditor_model.is_some() == risky,
        "{}: auditor {:?} with risky={}",
        s.session_id,
        s.auditor_model,
        risky
    );
    if let Some(a) = &s.auditor_model {
        let fallback = reference_ranking(&Default::default(), &global, 0, 1);
        let want = expected
            .get(1)
            .or_else(|| fallback.iter().find(|m| Some(*m) != expected.first()))
            .ok_or("no auditor candidate")?;
        ensure!(a == want, "{}: auditor {a}, expected {want}", s.session_id);
    }
    let want_safeguards = if risky { p.safeguards.clone() } else { Vec::new() };
    ensure!(
        s.active_safeguards == want_safeguards,
        "{}: safeguards {:?}, expected {:?}",
        s.session_id,
        s.active_safeguards,
        want_safeguards
    );
    let asks = risky && p.safeguards.contains(&Safeguard::ClarifyOnce);
    ensure!(
        s.clarification.is_some() == asks,
        "{}: clarification {:?} with asks={}",
        s.session_id,
        s.clarification,
        asks
    );
    cov.routed += 1;
    cov.high_assurance += usize::from(risky);
    Ok(())
}

/// The same decision on a world with every count multiplied by `factor`.
fn check_scale_invariance(world: &World, s: &DelegationSession, factor: u64) -> Result<(), String> {
    let scaled = world.scaled(factor);
    let engine = scaled.engine();
    let mut t = engine.open(s.session_id.clone(), &s.prompt_text, None).map_err(|e| e.to_string())?;
    let cluster = s.confirmed_cluster.unwrap();
    if cluster == t.proposed.cluster && !s.overridden {
        engine.confirm(&mut t)
    } else {
        engine.override_cluster(&mut t, cluster)
    }
    .map_err(|e| e.to_string())?;
    ensure!(
        (&t.primary_model, &t.auditor_model, t.high_assurance, &t.active_safeguards, t.risk_value)
            == (&s.primary_model, &s.auditor_model, s.high_assurance, &s.active_safeguards, s.risk_value),
        "{}: scaling counts by {factor} changed the decision",
        s.session_id
    );
    Ok(())
}

fn check_history(s: &DelegationSession) -> Result<(), String> {
    for w in s.history.windows(2) {
        let abandon_edge = w[0].is_open() && w[1] == SessionStatus::Repaired;
        ensure!(
            w[0].can_advance_to(w[1]) || abandon_edge,
            "{}: illegal edge {:?} -> {:?}",
            s.session_id,
            w[0],
            w[1]
        );
    }
    let questions = s
        .outputs
        .iter()
        .map(|o| o.text.matches("Clarification asked:").count())
        .max()
        .unwrap_or(0);
    ensure!(questions <= 1, "{}: {questions} clarifying questions reached the executor", s.session_id);
    Ok(())
}

pub fn run(sessions: usize, seed: u64) -> Result<Coverage, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cov = Coverage::default();
    let clock = Arc::new(ManualClock::new(1_700_000_000));
    let mut store = LogStore::in_memory(clock.clone());

    for i in 0..sessions {
        let world = random_world(&mut rng);
        let engine = world.engine();
        let k = world.model.cluster_count();
        let prompt = random_prompt(&mut rng);
        let retain = match rng.random_range(0..3) {
            0 => None,
            1 => Some(true),
            _ => Some(false),
        };
        let mut s = engine
            .open(format!("s{i:08}"), &prompt, retain)
            .map_err(|e| format!("open failed: {e}"))?;
        s.check_invariants()?;
        cov.sessions += 1;

        let mut logged = None;
        for _ in 0..10 {
            if !s.status.is_open() {
                break;
            }
            let before = s.clone();
            let was_routed = s.is_routed();
            let op = draw_op(&mut rng, k);
            let result: Result<(), DelegationError> = match op {
                Op::Confirm => engine.confirm(&mut s),
                Op::Override(c) => engine.override_cluster(&mut s, c),
                Op::Clarify => engine.clarify(&mut s, "just the final answer, no tables"),
                Op::SecondQuestion => pose_clarification(&mut s, engine.task_model()).map(|_| ()),
                Op::Execute { fail } => {
                    let failing = FailingExecutor { reason: "offline".into() };
                    let ex: &dyn delegation_cues::delegation::Executor =
                        if fail { &failing } else { &MockExecutor };
                    clock.advance(1);
                    match engine.execute(&mut s, ex, &mut store) {
                        Ok(e) => {
                            logged = Some(e);
                            Ok(())
                        }
                        Err(e @ DelegationError::Executor(_)) => {
                            cov.executor_failures += 1;
                            logged = store.entries().last().cloned();
                            Err(e)
                        }
                        Err(e) => Err(e),
                    }
                }
                Op::Abandon => match engine.abandon(&mut s, "session abandoned", &mut store) {
                    Ok(e) => {
                        cov.abandoned += 1;
                        logged = Some(e);
                        Ok(())
                    }
                    Err(e) => Err(e),
                },
            };
            s.check_invariants().map_err(|e| format!("{} after {op:?}: {e}", s.session_id))?;
            check_history(&s)?;
            match result {
                Err(DelegationError::Executor(_)) => {
                    ensure!(
                        s.status == SessionStatus::Closed && s.history.contains(&SessionStatus::Repaired),
                        "{}: executor failure left status {:?}",
                        s.session_id,
                        s.status
                    );
                }
                Err(e) => {
                    cov.rejected_ops += 1;
                    ensure!(s == before, "{}: rejected {op:?} ({e}) still changed the session", s.session_id);
                    if matches!(op, Op::SecondQuestion) && before.clarification.is_some() {
                        ensure!(
                            matches!(e, DelegationError::ClarificationBudget),
                            "{}: second question refused with {e}, not the budget",
                            s.session_id
                        );
                    }
                }
                Ok(()) => {
                    if matches!(op, Op::SecondQuestion) {
                        return Err(format!("{}: a second clarifying question was allowed", s.session_id));
                    }
                    if let Op::Override(c) = op {
                        cov.overrides += 1;
                        ensure!(
                            s.overridden == (c != s.proposed.cluster),
                            "{}: overridden flag {} for {c}",
                            s.session_id,
                            s.overridden
                        );
                    }
                }
            }
            if !was_routed && s.is_routed() {
                check_routing(&world, &s, &mut cov)?;
                check_scale_invariance(&world, &s, rng.random_range(2..=7))?;
                cov.clarified += usize::from(s.clarification.is_some());
            }
        }

        if let Some(entry) = logged {
            cov.logged += 1;
            ensure!(
                Some(entry.entry_id) == s.log_entry_id,
                "{}: log entry id {} vs session {:?}",
                s.session_id,
                entry.entry_id,
                s.log_entry_id
            );
            ensure!(
                entry.high_assurance == s.high_assurance
                    && entry.auditor_model == s.auditor_model
                    && entry.primary_model == s.primary_model
                    && entry.safeguards == s.active_safeguards,
                "{}: log entry disagrees with the session",
                s.session_id
            );
            ensure!(
                entry.prompt_text.is_some() == s.retain_prompt && entry.session_id.is_some() == s.retain_prompt,
                "{}: retention {} but entry carries prompt={} id={}",
                s.session_id,
                s.retain_prompt,
                entry.prompt_text.is_some(),
                entry.session_id.is_some()
            );
        }
    }
    Ok(cov)
}

/// The suite with its coverage floor: every category must be exercised.
pub fn suite(sessions: usize, seed: u64) -> SuiteResult {
    let c = run(sessions, seed)?;
    let floors = [
        ("routed", c.routed),
        ("high assurance", c.high_assurance),
        ("low assurance", c.routed - c.high_assurance),
        ("missing risk", c.missing_risk),
        ("tau equal to a rate", c.tau_on_rate),
        ("global fallback", c.global_fallback),
        ("clarified", c.clarified),
        ("overrides", c.overrides),
        ("rejected ops", c.rejected_ops),
        ("executor failures", c.executor_failures),
        ("abandoned", c.abandoned),
    ];
    for (name, n) in floors {
        ensure!(n > 0, "no session exercised {name}");
    }
    Ok(format!(
        "{} sessions, {} routed ({} high assurance, {} missing risk, {} with tau on a rate), {} rejected ops",
        c.sessions, c.routed, c.high_assurance, c.missing_risk, c.tau_on_rate, c.rejected_ops
    ))
}
