use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::delegation::routing::{compare_candidates, Candidate};
use crate::delegation::{
    noisy_cluster_counts, DelegationError, DelegationSession, LogError, RateWithSupport,
};
use crate::tasktyping::{EmbedError, TaskTypingError};

use super::{AppState, SessionSlot, EXPIRE_NOTE};

type Shared = Arc<AppState>;

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: String,
    /// Set when an override named a retired cluster.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub surviving_cluster: Option<usize>,
    /// Session state after a failed execution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<DelegationSession>,
}

fn error(status: StatusCode, code: &str, msg: impl Into<String>) -> Response {
    let body = ErrorBody {
        error: msg.into(),
        code: code.to_string(),
        surviving_cluster: None,
        session: None,
    };
    (status, Json(body)).into_response()
}

fn delegation_error(e: DelegationError, session: Option<&DelegationSession>) -> Response {
    use DelegationError as E;
    let (status, code) = match &e {
        E::InvalidTransition { .. }
        | E::NotRouted
        | E::AlreadyRouted
        | E::ClarificationBudget
        | E::NotHighAssurance
        | E::ClarifyNotActive
        | E::NoPendingQuestion
        | E::AlreadyLogged(_) => (StatusCode::CONFLICT, "illegal_transition"),
        E::UnknownCluster { .. } => (StatusCode::BAD_REQUEST, "unknown_cluster"),
        E::RetiredCluster { .. } => (StatusCode::BAD_REQUEST, "retired_cluster"),
        E::TaskTyping(TaskTypingError::EmptyPrompt) => (StatusCode::BAD_REQUEST, "empty_prompt"),
        E::TaskTyping(TaskTypingError::Embed(EmbedError::Service(_))) => {
            (StatusCode::SERVICE_UNAVAILABLE, "embedder_unavailable")
        }
        E::Executor(_) => (StatusCode::SERVICE_UNAVAILABLE, "executor_unavailable"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
    };
    let surviving_cluster = match &e {
        E::RetiredCluster { surviving, .. } => Some(*surviving),
        _ => None,
    };
    let body = ErrorBody {
        error: e.to_string(),
        code: code.to_string(),
        surviving_cluster,
        session: matches!(e, E::Executor(_)).then(|| session.cloned()).flatten(),
    };
    (status, Json(body)).into_response()
}

fn bad_json(r: JsonRejection) -> Response {
    error(StatusCode::BAD_REQUEST, "malformed", r.body_text())
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, Response> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))
}

fn unwrap(r: Result<Response, Response>) -> Response {
    r.unwrap_or_else(|e| e)
}

pub(crate) fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/override", post(override_session))
        .route("/v1/sessions/{id}/confirm", post(confirm_session))
        .route("/v1/sessions/{id}/clarify", post(clarify_session))
        .route("/v1/sessions/{id}/execute", post(execute_session))
        .route("/v1/clusters", get(clusters))
        .route("/v1/profiles", get(profiles))
        .route("/v1/log", get(list_log))
        .route("/v1/log/export", get(export_log))
        .route("/v1/log/frequencies", get(frequencies))
        .route("/v1/log/{entry_id}", delete(forget_entry))
        .route("/v1/healthz", get(healthz))
        .route("/v1/admin/reload", post(reload))
        .layer(middleware::from_fn_with_state(state.clone(), request_timeout))
        .with_state(state)
}

async fn request_timeout(State(state): State<Shared>, req: Request, next: Next) -> Response {
    match tokio::time::timeout(state.options.request_timeout, next.run(req)).await {
        Ok(r) => r,
        Err(_) => error(StatusCode::SERVICE_UNAVAILABLE, "timeout", "request timed out"),
    }
}

#[derive(Debug, Deserialize)]
struct CreateBody {
    prompt: String,
    #[serde(default)]
    retain_prompt: Option<bool>,
}

async fn create_session(State(state): State<Shared>, body: Result<Json<CreateBody>, JsonRejection>) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(r) => return bad_json(r),
    };
    unwrap(
        blocking(move || {
            if state.open_count() >= state.options.max_sessions {
                return error(StatusCode::SERVICE_UNAVAILABLE, "capacity", "too many open sessions");
            }
            let engine = state.engine();
            let id = state.next_session_id();
            match engine.open(id.clone(), &body.prompt, body.retain_prompt) {
                Ok(session) => {
                    let slot = SessionSlot {
                        session: session.clone(),
                        engine,
                        last_touched: state.clock.now(),
                    };
                    state
                        .sessions
                        .lock()
                        .expect("session map lock")
                        .insert(id, Arc::new(std::sync::Mutex::new(slot)));
                    (StatusCode::CREATED, Json(session)).into_response()
                }
                Err(e) => delegation_error(e, None),
            }
        })
        .await,
    )
}

/// Run `op` on one session under its lock. Idle open sessions are expired
/// first, so a late operation sees CLOSED.
async fn session_op(
    state: Shared,
    id: String,
    op: impl FnOnce(&AppState, &mut SessionSlot) -> Result<(), DelegationError> + Send + 'static,
) -> Response {
    unwrap(
        blocking(move || {
            let Some(slot) = state.session(&id) else {
                return error(StatusCode::NOT_FOUND, "not_found", format!("no session {id}"));
            };
            let mut slot = slot.lock().expect("session lock");
            let now = state.clock.now();
            if slot.session.status.is_open() && now.saturating_sub(slot.last_touched) >= state.options.session_ttl_secs {
                let _ = crate::delegation::expire(&mut slot.session, EXPIRE_NOTE);
            }
            slot.last_touched = now;
            match op(&state, &mut slot) {
                Ok(()) => Json(slot.session.clone()).into_response(),
                Err(e) => delegation_error(e, Some(&slot.session)),
            }
        })
        .await,
    )
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    session_op(state, id, |_, _| Ok(())).await
}

#[derive(Debug, Deserialize)]
struct OverrideBody {
    cluster: usize,
}

async fn override_session(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<OverrideBody>, JsonRejection>,
) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(r) => return bad_json(r),
    };
    session_op(state, id, move |_, slot| {
        let engine = slot.engine.clone();
        engine.override_cluster(&mut slot.session, body.cluster)
    })
    .await
}

async fn confirm_session(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    session_op(state, id, |_, slot| {
        let engine = slot.engine.clone();
        engine.confirm(&mut slot.session)
    })
    .await
}

#[derive(Debug, Deserialize)]
struct ClarifyBody {
    answer: String,
}

async fn clarify_session(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<ClarifyBody>, JsonRejection>,
) -> Response {
    let Json(body) = match body {
        Ok(b) => b,
        Err(r) => return bad_json(r),
    };
    session_op(state, id, move |_, slot| {
        let engine = slot.engine.clone();
        engine.clarify(&mut slot.session, &body.answer)
    })
    .await
}

async fn execute_session(State(state): State<Shared>, Path(id): Path<String>) -> Response {
    session_op(state, id, |state, slot| {
        let engine = slot.engine.clone();
        let mut log = state.log.lock().expect("log lock");
        engine.execute(&mut slot.session, state.executor.as_ref(), &mut log).map(|_| ())
    })
    .await
}

#[derive(Debug, Serialize)]
struct ClusterView {
    cluster: usize,
    label: String,
    keywords: Vec<String>,
    surviving: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    merged_into: Option<usize>,
    tie_rate: Option<RateWithSupport>,
}

#[derive(Debug, Serialize)]
struct ClustersView {
    task_model_version: String,
    tau: f64,
    clusters: Vec<ClusterView>,
}

async fn clusters(State(state): State<Shared>) -> Response {
    let engine = state.engine();
    let tm = engine.task_model();
    let signals = engine.signals();
    let clusters = (0..tm.cluster_count())
        .map(|c| {
            let surviving = tm.is_surviving(c);
            ClusterView {
                cluster: c,
                label: tm.labels[c].clone(),
                keywords: tm.keywords(c),
                surviving,
                merged_into: if surviving { None } else { tm.resolve(c) },
                tie_rate: signals.tie_tally(c).filter(|t| t.support > 0).map(Into::into),
            }
        })
        .collect();
    Json(ClustersView {
        task_model_version: tm.version(),
        tau: engine.policy().tau,
        clusters,
    })
    .into_response()
}

#[derive(Debug, Deserialize)]
struct ProfileQuery {
    cluster: Option<usize>,
}

#[derive(Debug, Serialize)]
struct ProfileRow {
    model: String,
    win_rate: RateWithSupport,
    /// Meets `min_support` and can be routed to on cluster rates.
    eligible: bool,
}

#[derive(Debug, Serialize)]
struct ProfileView {
    cluster: usize,
    label: String,
    min_support: u64,
    tie_rate: Option<RateWithSupport>,
    models: Vec<ProfileRow>,
}

async fn profiles(State(state): State<Shared>, query: Result<Query<ProfileQuery>, axum::extract::rejection::QueryRejection>) -> Response {
    let cluster = match query {
        Ok(Query(ProfileQuery { cluster: Some(c) })) => c,
        Ok(_) => return error(StatusCode::BAD_REQUEST, "malformed", "missing query parameter `cluster`"),
        Err(r) => return error(StatusCode::BAD_REQUEST, "malformed", r.body_text()),
    };
    let engine = state.engine();
    let tm = engine.task_model();
    if cluster >= tm.cluster_count() {
        return error(StatusCode::NOT_FOUND, "not_found", format!("no cluster {cluster}"));
    }
    let signals = engine.signals();
    let min_support = engine.policy().min_support;
    let mut rows: Vec<Candidate> = signals
        .profile(cluster)
        .into_iter()
        .filter(|(_, t)| t.support > 0)
        .map(|(model, tally)| Candidate {
            model,
            rate: tally.rate(),
            tally,
        })
        .collect();
    rows.sort_by(compare_candidates);
    Json(ProfileView {
        cluster,
        label: tm.labels[cluster].clone(),
        min_support,
        tie_rate: signals.tie_tally(cluster).filter(|t| t.support > 0).map(Into::into),
        models: rows
            .into_iter()
            .map(|c| ProfileRow {
                eligible: c.tally.support >= min_support,
                model: c.model,
                win_rate: c.tally.into(),
            })
            .collect(),
    })
    .into_response()
}

#[derive(Debug, Deserialize)]
struct LogQuery {
    limit: Option<usize>,
    cursor: Option<u64>,
}

const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 1000;

async fn list_log(State(state): State<Shared>, query: Result<Query<LogQuery>, axum::extract::rejection::QueryRejection>) -> Response {
    let q = match query {
        Ok(Query(q)) => q,
        Err(r) => return error(StatusCode::BAD_REQUEST, "malformed", r.body_text()),
    };
    let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
    unwrap(blocking(move || Json(state.log.lock().expect("log lock").list(limit, q.cursor)).into_response()).await)
}

async fn export_log(State(state): State<Shared>) -> Response {
    unwrap(
        blocking(move || {
            let mut out = Vec::new();
            match state.log.lock().expect("log lock").export_jsonl(&mut out) {
                Ok(()) => ([(header::CONTENT_TYPE, "application/x-ndjson")], out).into_response(),
                Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
            }
        })
        .await,
    )
}

async fn forget_entry(State(state): State<Shared>, Path(entry_id): Path<u64>) -> Response {
    unwrap(
        blocking(move || {
            let mut log = state.log.lock().expect("log lock");
            match crate::delegation::forget(&mut log, entry_id) {
                Ok(t) => Json(t).into_response(),
                // Forgetting twice is a no-op that reports the existing tombstone.
                Err(DelegationError::Log(LogError::Forgotten(t))) => Json(t).into_response(),
                Err(DelegationError::Log(LogError::NotFound(id))) => {
                    error(StatusCode::NOT_FOUND, "not_found", format!("no log entry {id}"))
                }
                Err(e) => delegation_error(e, None),
            }
        })
        .await,
    )
}

#[derive(Debug, Serialize)]
struct FrequencyRow {
    cluster: usize,
    count: u64,
    noised: bool,
}

#[derive(Debug, Serialize)]
struct FrequencyView {
    epsilon: f64,
    rows: Vec<FrequencyRow>,
}

async fn frequencies(State(state): State<Shared>) -> Response {
    unwrap(
        blocking(move || {
            let engine = state.engine();
            let log = state.log.lock().expect("log lock");
            let counts = noisy_cluster_counts(
                &log,
                engine.policy(),
                engine.task_model().cluster_count(),
                state.options.noise_seed,
            );
            Json(FrequencyView {
                epsilon: engine.policy().noise_epsilon,
                rows: counts
                    .into_iter()
                    .map(|(cluster, c)| FrequencyRow {
                        cluster,
                        count: c.count,
                        noised: c.noised,
                    })
                    .collect(),
            })
            .into_response()
        })
        .await,
    )
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Health {
    pub status: String,
    pub task_model_version: String,
    pub signals_task_model_version: String,
    pub signals_created_at: u64,
    pub tau: f64,
    pub open_sessions: usize,
}

fn health(state: &AppState) -> Health {
    let engine = state.engine();
    Health {
        status: "ok".into(),
        task_model_version: engine.task_model().version(),
        signals_task_model_version: engine.signals().task_model_version.clone(),
        signals_created_at: engine.signals().created_at,
        tau: engine.policy().tau,
        open_sessions: state.open_count(),
    }
}

async fn healthz(State(state): State<Shared>) -> Response {
    unwrap(blocking(move || Json(health(&state)).into_response()).await)
}

async fn reload(State(state): State<Shared>) -> Response {
    unwrap(
        blocking(move || {
            let Some(source) = &state.source else {
                return error(StatusCode::CONFLICT, "no_source", "service was started without artifact paths");
            };
            match source.load() {
                Ok(engine) => {
                    *state.engine.write().expect("engine lock") = Arc::new(engine);
                    Json(health(&state)).into_response()
                }
                Err(e) => error(StatusCode::BAD_REQUEST, "reload_failed", e.to_string()),
            }
        })
        .await,
    )
}
