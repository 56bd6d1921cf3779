//! JSON-over-HTTP front end for the delegation engine.
//!
//! Handlers only parse, lock and translate errors; every state change is a
//! call into [`crate::delegation`]. Sessions live in memory, one mutex each;
//! finished sessions are written through to the accountability log.

mod handlers;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::oneshot;

use crate::delegation::{
    Clock, DelegationEngine, DelegationError, DelegationSession, Executor, HttpExecutor, HttpExecutorConfig, LogError,
    LogStore, MockExecutor, PolicyConfig, SystemClock,
};
use crate::signals::{SignalArtifact, SignalError};
use crate::tasktyping::{TaskTypeModel, TaskTypingError};

use handlers::router;
pub use handlers::{ErrorBody, Health};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("task model {path}: {source}")]
    TaskModel { path: PathBuf, source: TaskTypingError },
    #[error("signal artifact {path}: {source}")]
    Signals { path: PathBuf, source: SignalError },
    #[error(transparent)]
    Delegation(#[from] DelegationError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("invalid service config: {0}")]
    Config(String),
    #[error("runtime: {0}")]
    Runtime(std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExecutorConfig {
    Mock,
    Http(HttpExecutorConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub task_model_path: PathBuf,
    pub signals_path: PathBuf,
    /// Missing file means the default policy with τ taken from the signals.
    pub policy_path: Option<PathBuf>,
    /// Overrides the policy's τ.
    pub tau: Option<f64>,
    /// `None` keeps the log in memory.
    pub log_path: Option<PathBuf>,
    /// Overrides the policy's prompt-retention default.
    pub retain_prompts: Option<bool>,
    pub request_timeout_ms: u64,
    pub max_sessions: usize,
    /// Open sessions idle this long expire to CLOSED.
    pub session_ttl_secs: u64,
    /// Seed for the noised frequency release.
    pub noise_seed: u64,
    pub executor: ExecutorConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            task_model_path: PathBuf::from("task_model.json"),
            signals_path: PathBuf::from("signals.json"),
            policy_path: None,
            tau: None,
            log_path: None,
            retain_prompts: None,
            request_timeout_ms: 30_000,
            max_sessions: 10_000,
            session_ttl_secs: 3_600,
            noise_seed: 0,
            executor: ExecutorConfig::Mock,
        }
    }
}

/// Options that do not come from artifact files.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceOptions {
    pub request_timeout: Duration,
    pub max_sessions: usize,
    pub session_ttl_secs: u64,
    pub noise_seed: u64,
}

impl Default for ServiceOptions {
    fn default() -> Self {
        let c = ServiceConfig::default();
        ServiceOptions {
            request_timeout: Duration::from_millis(c.request_timeout_ms),
            max_sessions: c.max_sessions,
            session_ttl_secs: c.session_ttl_secs,
            noise_seed: c.noise_seed,
        }
    }
}

/// Where a reload re-reads artifacts from.
#[derive(Debug, Clone)]
pub(crate) struct ArtifactSource {
    task_model_path: PathBuf,
    signals_path: PathBuf,
    policy_path: Option<PathBuf>,
    tau: Option<f64>,
    retain_prompts: Option<bool>,
}

impl ArtifactSource {
    fn load(&self) -> Result<DelegationEngine, ServiceError> {
        let tm = TaskTypeModel::load(&self.task_model_path).map_err(|source| ServiceError::TaskModel {
            path: self.task_model_path.clone(),
            source,
        })?;
        let signals = SignalArtifact::load(&self.signals_path).map_err(|source| ServiceError::Signals {
            path: self.signals_path.clone(),
            source,
        })?;
        let mut policy_cfg = match &self.policy_path {
            Some(p) => PolicyConfig::load(p)?,
            None => PolicyConfig::default(),
        };
        if self.tau.is_some() {
            policy_cfg.tau = self.tau;
        }
        if let Some(r) = self.retain_prompts {
            policy_cfg.retain_prompts = r;
        }
        crate::delegation::check_versions(&tm, &signals)?;
        let policy = policy_cfg.resolve(&signals)?;
        Ok(DelegationEngine::new(Arc::new(tm), Arc::new(signals), policy)?)
    }
}

pub(crate) struct SessionSlot {
    pub session: DelegationSession,
    /// Artifacts the session was opened against; a reload does not change
    /// them mid-session.
    pub engine: Arc<DelegationEngine>,
    pub last_touched: u64,
}

pub(crate) struct AppState {
    pub engine: RwLock<Arc<DelegationEngine>>,
    pub sessions: Mutex<HashMap<String, Arc<Mutex<SessionSlot>>>>,
    pub log: Mutex<LogStore>,
    pub executor: Arc<dyn Executor>,
    pub clock: Arc<dyn Clock>,
    pub options: ServiceOptions,
    pub source: Option<ArtifactSource>,
    next_session: AtomicU64,
}

pub(crate) const ABANDON_NOTE: &str =
    "The service shut down before this request was executed; nothing was delegated. Please resubmit.";
pub(crate) const EXPIRE_NOTE: &str = "Session expired after inactivity before execution; nothing was delegated.";

impl AppState {
    pub fn engine(&self) -> Arc<DelegationEngine> {
        self.engine.read().expect("engine lock").clone()
    }

    pub fn next_session_id(&self) -> String {
        format!("s{:08}", self.next_session.fetch_add(1, Ordering::SeqCst))
    }

    pub fn session(&self, id: &str) -> Option<Arc<Mutex<SessionSlot>>> {
        self.sessions.lock().expect("session map lock").get(id).cloned()
    }

    pub fn open_count(&self) -> usize {
        let slots: Vec<_> = self.sessions.lock().expect("session map lock").values().cloned().collect();
        slots
            .iter()
            .filter(|s| s.lock().expect("session lock").session.status.is_open())
            .count()
    }

    /// Expire idle open sessions and drop idle finished ones.
    pub fn sweep(&self) {
        let now = self.clock.now();
        let ttl = self.options.session_ttl_secs;
        let mut map = self.sessions.lock().expect("session map lock");
        map.retain(|_, slot| {
            let mut slot = slot.lock().expect("session lock");
            if now.saturating_sub(slot.last_touched) < ttl {
                return true;
            }
            if slot.session.status.is_open() {
                let _ = crate::delegation::expire(&mut slot.session, EXPIRE_NOTE);
                slot.last_touched = now;
                true
            } else {
                false
            }
        });
    }

    /// Shutdown path: every open session is abandoned and logged.
    fn abandon_open(&self) -> Result<usize, ServiceError> {
        let slots: Vec<_> = {
            let map = self.sessions.lock().expect("session map lock");
            let mut v: Vec<_> = map.iter().map(|(k, s)| (k.clone(), s.clone())).collect();
            v.sort_by(|a, b| a.0.cmp(&b.0));
            v
        };
        let mut n = 0;
        for (_, slot) in slots {
            let mut slot = slot.lock().expect("session lock");
            if slot.session.status.is_open() {
                let engine = slot.engine.clone();
                let mut log = self.log.lock().expect("log lock");
                engine.abandon(&mut slot.session, ABANDON_NOTE, &mut log)?;
                n += 1;
            }
        }
        self.log.lock().expect("log lock").flush()?;
        Ok(n)
    }
}

/// Everything a running service needs, already loaded.
pub struct ServiceParts {
    pub engine: DelegationEngine,
    pub log: LogStore,
    pub executor: Arc<dyn Executor>,
    pub clock: Arc<dyn Clock>,
    pub options: ServiceOptions,
}

/// A running service with its own runtime. Dropping it without
/// [`ServiceHandle::shutdown`] stops the server without abandoning sessions.
pub struct ServiceHandle {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: Option<oneshot::Sender<()>>,
    server: Option<tokio::task::JoinHandle<std::io::Result<()>>>,
    runtime: Option<tokio::runtime::Runtime>,
}

impl ServiceHandle {
    /// Load artifacts from `config`, open the log and start listening.
    pub fn start(config: &ServiceConfig) -> Result<Self, ServiceError> {
        if config.request_timeout_ms == 0 {
            return Err(ServiceError::Config("request timeout must be positive".into()));
        }
        let source = ArtifactSource {
            task_model_path: config.task_model_path.clone(),
            signals_path: config.signals_path.clone(),
            policy_path: config.policy_path.clone(),
            tau: config.tau,
            retain_prompts: config.retain_prompts,
        };
        let engine = source.load()?;
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let log = match &config.log_path {
            Some(p) => LogStore::open(p, clock.clone())?,
            None => LogStore::in_memory(clock.clone()),
        };
        let executor: Arc<dyn Executor> = match &config.executor {
            ExecutorConfig::Mock => Arc::new(MockExecutor),
            ExecutorConfig::Http(c) => Arc::new(HttpExecutor::new(c.clone())),
        };
        let parts = ServiceParts {
            engine,
            log,
            executor,
            clock,
            options: ServiceOptions {
                request_timeout: Duration::from_millis(config.request_timeout_ms),
                max_sessions: config.max_sessions,
                session_ttl_secs: config.session_ttl_secs,
                noise_seed: config.noise_seed,
            },
        };
        Self::start_with(config.listen, parts, Some(source))
    }

    /// Start from preloaded parts. Without a source the reload endpoint
    /// answers 409.
    pub fn start_parts(listen: SocketAddr, parts: ServiceParts) -> Result<Self, ServiceError> {
        Self::start_with(listen, parts, None)
    }

    fn start_with(listen: SocketAddr, parts: ServiceParts, source: Option<ArtifactSource>) -> Result<Self, ServiceError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(ServiceError::Runtime)?;
        let state = Arc::new(AppState {
            engine: RwLock::new(Arc::new(parts.engine)),
            sessions: Mutex::new(HashMap::new()),
            log: Mutex::new(parts.log),
            executor: parts.executor,
            clock: parts.clock,
            options: parts.options,
            source,
            next_session: AtomicU64::new(1),
        });
        let listener = runtime
            .block_on(tokio::net::TcpListener::bind(listen))
            .map_err(|source| ServiceError::Bind { addr: listen, source })?;
        let addr = listener
            .local_addr()
            .map_err(|source| ServiceError::Bind { addr: listen, source })?;
        let (tx, rx) = oneshot::channel();
        let app = router(state.clone());
        let server = runtime.spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        let sweeper_state = state.clone();
        runtime.spawn(async move {
            let period = Duration::from_secs((sweeper_state.options.session_ttl_secs / 4).clamp(1, 60));
            loop {
                tokio::time::sleep(period).await;
                let s = sweeper_state.clone();
                let _ = tokio::task::spawn_blocking(move || s.sweep()).await;
            }
        });
        tracing::info!(%addr, "service listening");
        Ok(ServiceHandle {
            addr,
            state,
            shutdown: Some(tx),
            server: Some(server),
            runtime: Some(runtime),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Block until Ctrl-C, then shut down gracefully.
    pub fn run_until_ctrl_c(self) -> Result<usize, ServiceError> {
        if let Some(rt) = &self.runtime {
            rt.block_on(async {
                let _ = tokio::signal::ctrl_c().await;
            });
        }
        self.shutdown()
    }

    /// Stop accepting requests, let in-flight ones finish, abandon and log
    /// every open session, and flush the log. Returns the abandoned count.
    pub fn shutdown(mut self) -> Result<usize, ServiceError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let (Some(rt), Some(server)) = (self.runtime.as_ref(), self.server.take()) {
            let _ = rt.block_on(server);
        }
        let n = self.state.abandon_open()?;
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
        tracing::info!(abandoned = n, "service stopped");
        Ok(n)
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}
