//! HTTP transparency suite: the service must return exactly what the engine
//! returns when driven directly with the same inputs.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use delegation_cues::delegation::{
    Clock, DelegationEngine, DelegationError, DelegationSession, Executor, ExecutorError, LogStore, ManualClock,
    SessionStatus,
};
use delegation_cues::service::{ServiceHandle, ServiceOptions, ServiceParts};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::fixtures::toy_engine;
use super::SuiteResult;
use crate::ensure;

/// Fails the primary for prompts mentioning "flaky" and the audit for
/// prompts mentioning "shaky"; echoes otherwise.
#[derive(Debug, Clone, Copy)]
pub struct ScriptedExecutor;

impl Executor for ScriptedExecutor {
    fn execute(&self, model: &str, prompt: &str) -> Result<String, ExecutorError> {
        let audit = prompt.starts_with("Check the answer");
        if (!audit && prompt.contains("flaky")) || (audit && prompt.contains("shaky")) {
            return Err(ExecutorError::Unavailable(format!("{model} refused")));
        }
        Ok(format!("<{model}> {}", prompt.len()))
    }
}

pub struct Client {
    agent: ureq::Agent,
    base: String,
}

impl Client {
    pub fn new(base: String) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        Client { agent, base }
    }

    fn finish(resp: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<(u16, String), String> {
        let mut resp = resp.map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok((status, body))
    }

    fn json((status, body): (u16, String)) -> Result<(u16, Value), String> {
        let v = serde_json::from_str(&body).map_err(|e| format!("status {status}, body {body:?}: {e}"))?;
        Ok((status, v))
    }

    pub fn post(&self, path: &str, body: Option<Value>) -> Result<(u16, Value), String> {
        let req = self.agent.post(format!("{}{path}", self.base));
        let resp = match body {
            Some(b) => req.send_json(b),
            None => req.send_empty(),
        };
        Self::json(Self::finish(resp)?)
    }

    pub fn get(&self, path: &str) -> Result<(u16, Value), String> {
        Self::json(Self::finish(self.agent.get(format!("{}{path}", self.base)).call())?)
    }

    pub fn get_text(&self, path: &str) -> Result<(u16, String), String> {
        Self::finish(self.agent.get(format!("{}{path}", self.base)).call())
    }

    pub fn delete(&self, path: &str) -> Result<(u16, Value), String> {
        Self::json(Self::finish(self.agent.delete(format!("{}{path}", self.base)).call())?)
    }
}

pub fn local() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

/// Status the service should answer with for a failed engine call.
fn expected_status(e: &DelegationError) -> u16 {
    match e {
        DelegationError::Executor(_) => 503,
        DelegationError::UnknownCluster { .. } | DelegationError::RetiredCluster { .. } => 400,
        _ => 409,
    }
}

/// One step on both sides; the HTTP session must equal the direct one, on
/// success and on failure alike.
fn compare(
    label: &str,
    http: (u16, Value),
    direct: Result<(), DelegationError>,
    session: &DelegationSession,
) -> Result<(), String> {
    let want = serde_json::to_value(session).unwrap();
    let (status, body) = http;
    match direct {
        Ok(()) => {
            ensure!(status == 200 || status == 201, "{label}: HTTP {status} {body} but direct call succeeded");
            ensure!(body == want, "{label}: HTTP session differs\n  http:   {body}\n  direct: {want}");
        }
        Err(e) => {
            ensure!(
                status == expected_status(&e),
                "{label}: HTTP {status} for direct error {e} ({body})"
            );
            if let DelegationError::RetiredCluster { surviving, .. } = e {
                ensure!(
                    body["surviving_cluster"] == json!(surviving),
                    "{label}: retired override did not name surviving cluster {surviving}: {body}"
                );
            }
            if matches!(e, DelegationError::Executor(_)) {
                ensure!(body["session"] == want, "{label}: failed execution returned a different session");
            }
        }
    }
    Ok(())
}

fn get_session(client: &Client, id: &str, session: &DelegationSession, label: &str) -> Result<(), String> {
    compare(label, client.get(&format!("/v1/sessions/{id}"))?, Ok(()), session)
}

fn prompt(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 10] = [
        "invoice", "limerick", "regex", "budget", "citation", "refactor", "itinerary", "abstract", "sonnet", "query",
    ];
    let mut words: Vec<&str> = (0..rng.random_range(2..=5)).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
    match rng.random_range(0..10) {
        0 | 1 => words.push("flaky"),
        2 => words.push("shaky"),
        _ => {}
    }
    words.join(" ")
}

/// Drive `flows` random sessions through HTTP and directly, then shut the
/// service down and compare the two logs after replay.
pub fn suite(dir: &Path, flows: usize, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = 1_750_000_000;
    let service_clock = Arc::new(ManualClock::new(start));
    let direct_clock = Arc::new(ManualClock::new(start));
    let log_path = dir.join("service.log");
    let log = LogStore::open(&log_path, service_clock.clone() as Arc<dyn Clock>).map_err(|e| e.to_string())?;
    let engine: DelegationEngine = toy_engine(0.3);
    let handle = ServiceHandle::start_parts(
        local(),
        ServiceParts {
            engine: engine.clone(),
            log,
            executor: Arc::new(ScriptedExecutor),
            clock: service_clock.clone(),
            options: ServiceOptions::default(),
        },
    )
    .map_err(|e| e.to_string())?;
    let client = Client::new(handle.base_url());
    let mut store = LogStore::in_memory(direct_clock.clone());
    let mut open = Vec::new();
    let (mut steps, mut errors) = (0usize, 0usize);

    for i in 0..flows {
        let tick = |dt| {
            service_clock.advance(dt);
            direct_clock.advance(dt);
        };
        tick(rng.random_range(1..5));
        let id = format!("s{:08}", i + 1);
        let p = prompt(&mut rng);
        let retain = [None, Some(true), Some(false)][rng.random_range(0..3)];
        let mut body = json!({ "prompt": p });
        if let Some(r) = retain {
            body["retain_prompt"] = json!(r);
        }
        let mut s = engine.open(id.clone(), &p, retain).map_err(|e| e.to_string())?;
        compare(&format!("{id} create"), client.post("/v1/sessions", Some(body))?, Ok(()), &s)?;
        steps += 1;

        if rng.random_bool(0.3) {
            let r = engine.clarify(&mut s, "early");
            errors += usize::from(r.is_err());
            compare(&format!("{id} early clarify"), client.post(&format!("/v1/sessions/{id}/clarify"), Some(json!({"answer": "early"})))?, r, &s)?;
            steps += 1;
        }
        if rng.random_bool(0.3) {
            // Often unknown (4) or retired (3).
            let c = rng.random_range(0..=4);
            let r = engine.override_cluster(&mut s, c);
            errors += usize::from(r.is_err());
            compare(&format!("{id} override {c}"), client.post(&format!("/v1/sessions/{id}/override"), Some(json!({"cluster": c})))?, r, &s)?;
            steps += 1;
        }
        if s.status == SessionStatus::Typed {
            let r = engine.confirm(&mut s);
            compare(&format!("{id} confirm"), client.post(&format!("/v1/sessions/{id}/confirm"), None)?, r, &s)?;
            steps += 1;
        }
        if s.clarification.is_some() && rng.random_bool(0.7) {
            let r = engine.clarify(&mut s, "keep it short");
            compare(&format!("{id} clarify"), client.post(&format!("/v1/sessions/{id}/clarify"), Some(json!({"answer": "keep it short"})))?, r, &s)?;
            steps += 1;
        }
        if rng.random_bool(0.15) {
            get_session(&client, &id, &s, &format!("{id} left open"))?;
            open.push(s);
            continue;
        }
        tick(1);
        let r = engine.execute(&mut s, &ScriptedExecutor, &mut store).map(|_| ());
        errors += usize::from(r.is_err());
        compare(&format!("{id} execute"), client.post(&format!("/v1/sessions/{id}/execute"), None)?, r, &s)?;
        steps += 1;
        let r = engine.execute(&mut s, &ScriptedExecutor, &mut store).map(|_| ());
        compare(&format!("{id} second execute"), client.post(&format!("/v1/sessions/{id}/execute"), None)?, r, &s)?;
        get_session(&client, &id, &s, &format!("{id} final"))?;

        if let (Some(entry), true) = (s.log_entry_id, rng.random_bool(0.25)) {
            tick(1);
            let t = store.forget(entry).map_err(|e| e.to_string())?;
            let (status, body) = client.delete(&format!("/v1/log/{entry}"))?;
            ensure!(status == 200 && body == serde_json::to_value(t).unwrap(), "{id} forget: HTTP {status} {body}");
        }
    }

    let (status, missing) = client.get("/v1/sessions/s99999999")?;
    ensure!(status == 404 && missing["code"] == "not_found", "unknown session answered {status} {missing}");
    let (status, log_page) = client.get("/v1/log?limit=1000")?;
    ensure!(status == 200, "log listing answered {status}");
    ensure!(
        log_page == serde_json::to_value(store.list(1000, None)).unwrap(),
        "HTTP log listing differs from the direct log"
    );
    let (status, exported) = client.get_text("/v1/log/export")?;
    let mut direct_export = Vec::new();
    store.export_jsonl(&mut direct_export).unwrap();
    ensure!(
        status == 200 && exported.as_bytes() == direct_export.as_slice(),
        "HTTP export differs from the direct export"
    );

    // Shutdown abandons what is still open, in id order, and logs it.
    let abandoned = handle.shutdown().map_err(|e| e.to_string())?;
    ensure!(abandoned == open.len(), "shutdown abandoned {abandoned}, expected {}", open.len());
    let replayed = LogStore::open(&log_path, service_clock.clone() as Arc<dyn Clock>).map_err(|e| e.to_string())?;
    let mut abandoned_ids = Vec::new();
    for s in &mut open {
        let e = engine.abandon(s, "shutdown", &mut store).map_err(|e| e.to_string())?;
        abandoned_ids.push(e.entry_id);
        let got = replayed.get(e.entry_id).map_err(|e| e.to_string())?;
        ensure!(
            got.status == SessionStatus::Repaired && got.repair_or_handoff_note.as_deref().is_some_and(|n| n.contains("shut down")),
            "abandoned entry {} is {:?} with note {:?}",
            e.entry_id,
            got.status,
            got.repair_or_handoff_note
        );
    }
    // Everything but the wording of the shutdown note must match.
    let normalized = |store: &LogStore| {
        let mut v = serde_json::to_value(store.list(1000, None)).unwrap();
        for item in v["items"].as_array_mut().unwrap() {
            if abandoned_ids.contains(&item["entry_id"].as_u64().unwrap()) {
                item["repair_or_handoff_note"] = Value::Null;
            }
        }
        v
    };
    ensure!(normalized(&replayed) == normalized(&store), "replayed service log differs from the direct log");

    Ok(format!(
        "{flows} flows, {steps} steps ({errors} refused on both sides), {} left open and abandoned on shutdown",
        open.len()
    ))
}
