//! Prompt embedding providers.
//!
//! The hash fallback is a signed feature-hashing bag of words:
//!
//! 1. tokenize (lowercase, split on non-alphanumerics) and drop stop words;
//!    if nothing survives, keep all tokens; if there are still none, the
//!    lowercased trimmed text is the single token;
//! 2. for each token `t`, `h = fnv1a64(seed.to_le_bytes() ++ t.as_bytes())`;
//!    add `+1` at index `h % dimension` when bit 63 of `h` is clear, `-1` otherwise;
//! 3. L2-normalize. If the sum cancels to zero, the result is the unit basis
//!    vector at the hash of the whole lowercased text.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text;

/// Default prompt embedding width.
pub const DEFAULT_EMBEDDING_DIM: usize = 384;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding service error: {0}")]
    Service(String),
    #[error("embedding length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("external provider requires an endpoint configuration")]
    MissingEndpoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    HashFallback,
    ExternalService,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    /// Name of the environment variable holding a bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingProvider {
    pub kind: ProviderKind,
    pub dimension: usize,
    /// Hash seed; ignored by the external provider.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointConfig>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a str,
    dimension: usize,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

impl EmbeddingProvider {
    pub fn hash(dimension: usize, seed: u64) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        EmbeddingProvider {
            kind: ProviderKind::HashFallback,
            dimension,
            seed,
            endpoint: None,
        }
    }

    pub fn external(dimension: usize, endpoint: EndpointConfig) -> Self {
        EmbeddingProvider {
            kind: ProviderKind::ExternalService,
            dimension,
            seed: 0,
            endpoint: Some(endpoint),
        }
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        match self.kind {
            ProviderKind::HashFallback => Ok(hash_embed(text, self.dimension, self.seed)),
            ProviderKind::ExternalService => {
                let endpoint = self.endpoint.as_ref().ok_or(EmbedError::MissingEndpoint)?;
                let v = call_service(endpoint, text, self.dimension)?;
                if v.len() != self.dimension {
                    return Err(EmbedError::LengthMismatch {
                        expected: self.dimension,
                        got: v.len(),
                    });
                }
                Ok(v)
            }
        }
    }

    /// Embed every text, results in input order.
    pub fn embed_all<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<Vec<f64>>, EmbedError> {
        texts.iter().map(|t| self.embed(t.as_ref())).collect()
    }
}

fn call_service(
    endpoint: &EndpointConfig,
    text: &str,
    dimension: usize,
) -> Result<Vec<f64>, EmbedError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(endpoint.timeout_ms)))
        .build()
        .into();
    let mut req = agent.post(&endpoint.base_url);
    if let Some(var) = &endpoint.auth_env {
        if let Ok(token) = std::env::var(var) {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
    }
    let mut resp = req
        .send_json(EmbedRequest {
            input: text,
            dimension,
        })
        .map_err(|e| EmbedError::Service(e.to_string()))?;
    let body: EmbedResponse = resp
        .body_mut()
        .read_json()
        .map_err(|e| EmbedError::Service(e.to_string()))?;
    Ok(body.embedding)
}

pub(crate) fn fnv1a64(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for part in parts {
        for &b in *part {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

fn hash_embed(text: &str, dimension: usize, seed: u64) -> Vec<f64> {
    let seed_bytes = seed.to_le_bytes();
    let all = text::tokenize(text);
    let content: Vec<&String> = all.iter().filter(|t| !text::is_stop_word(t)).collect();
    let whole = text.trim().to_lowercase();
    let tokens: Vec<&str> = if !content.is_empty() {
        content.iter().map(|s| s.as_str()).collect()
    } else if !all.is_empty() {
        all.iter().map(String::as_str).collect()
    } else {
        vec![whole.as_str()]
    };

    let mut v = vec![0.0; dimension];
    for t in tokens {
        let h = fnv1a64(&[&seed_bytes, t.as_bytes()]);
        let idx = (h % dimension as u64) as usize;
        v[idx] += if h >> 63 == 0 { 1.0 } else { -1.0 };
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let h = fnv1a64(&[&seed_bytes, whole.as_bytes()]);
        v[(h % dimension as u64) as usize] = 1.0;
        return v;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    v
}
