//! Agent executors: `(model id, prompt) → output text`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecutorError {
    #[error("executor unavailable: {0}")]
    Unavailable(String),
    #[error("executor returned a malformed response: {0}")]
    BadResponse(String),
}

pub trait Executor: Send + Sync {
    fn execute(&self, model: &str, prompt: &str) -> Result<String, ExecutorError>;
}

/// Deterministic echo tagged with the model id.
#[derive(Debug, Clone, Copy, Default)]
pub struct MockExecutor;

impl Executor for MockExecutor {
    fn execute(&self, model: &str, prompt: &str) -> Result<String, ExecutorError> {
        Ok(format!("[{model}] {prompt}"))
    }
}

/// Always fails; exercises the repair path.
#[derive(Debug, Clone, Default)]
pub struct FailingExecutor {
    pub reason: String,
}

impl Executor for FailingExecutor {
    fn execute(&self, _model: &str, _prompt: &str) -> Result<String, ExecutorError> {
        Err(ExecutorError::Unavailable(self.reason.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpExecutorConfig {
    pub endpoint: String,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// Generic completion client: POSTs `{"model", "prompt"}` and reads
/// `{"output"}`.
#[derive(Debug, Clone)]
pub struct HttpExecutor {
    config: HttpExecutorConfig,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
}

#[derive(Deserialize)]
struct CompletionResponse {
    output: String,
}

impl HttpExecutor {
    pub fn new(config: HttpExecutorConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .build()
            .into();
        HttpExecutor { config, agent }
    }
}

impl Executor for HttpExecutor {
    fn execute(&self, model: &str, prompt: &str) -> Result<String, ExecutorError> {
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(var) = &self.config.auth_env {
            if let Ok(token) = std::env::var(var) {
                req = req.header("Authorization", &format!("Bearer {token}"));
            }
        }
        let mut resp = req
            .send_json(CompletionRequest { model, prompt })
            .map_err(|e| ExecutorError::Unavailable(e.to_string()))?;
        let body: CompletionResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ExecutorError::BadResponse(e.to_string()))?;
        Ok(body.output)
    }
}
