//! Task typing: embed prompts, reduce, cluster with K-means, repair small
//! clusters, label them, and assign new prompts to a task type.

pub mod embed;
pub mod kmeans;
pub mod labels;
pub mod reducer;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matrix::Matrix;
pub use embed::{EmbedError, EmbeddingProvider, EndpointConfig, ProviderKind};
pub use kmeans::{fit_kmeans, reassign_small_clusters, KMeansError, KMeansFit, Reassignment};
pub use labels::label_clusters;
pub use reducer::{fit_pca, fit_reducer, PcaFit, Reduce, Reducer, ReducerError};

pub const TASK_MODEL_SCHEMA_VERSION: &str = "1";
pub const DEFAULT_CLUSTER_COUNT: usize = 30;

#[derive(Debug, Error)]
pub enum TaskTypingError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Reducer(#[from] ReducerError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("embeddings have inconsistent widths")]
    RaggedEmbeddings,
    #[error("prompt count {prompts} does not match embedding rows {rows}")]
    Misaligned { prompts: usize, rows: usize },
    #[error("provider dimension {provider} does not match model dimension {model}")]
    DimensionMismatch { provider: usize, model: usize },
    #[error("task model schema version {found:?} is not supported (expected {expected:?})")]
    VersionMismatch { found: String, expected: String },
    #[error("corrupted task model: {0}")]
    Corrupt(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Small-cluster threshold used when none is configured: `max(10, ⌈0.005·N⌉)`.
pub fn default_min_cluster_size(n: usize) -> usize {
    10.max((n as f64 * 0.005).ceil() as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTypingConfig {
    pub cluster_count: usize,
    pub reduced_dim: usize,
    /// `None` selects [`default_min_cluster_size`].
    pub min_cluster_size: Option<usize>,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for TaskTypingConfig {
    fn default() -> Self {
        TaskTypingConfig {
            cluster_count: DEFAULT_CLUSTER_COUNT,
            reduced_dim: reducer::DEFAULT_REDUCED_DIM,
            min_cluster_size: None,
            seed: 0,
            max_iters: kmeans::DEFAULT_MAX_ITERS,
        }
    }
}

/// A prompt's proposed task type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeAssignment {
    pub cluster: usize,
    /// `d2 / (d1 + d2)` for nearest and runner-up centroid distances.
    pub confidence: f64,
    pub distance_to_centroid: f64,
    pub runner_up_cluster: Option<usize>,
    pub runner_up_distance: Option<f64>,
    pub keywords: Vec<String>,
}

/// Fitted reducer, centroids, labels and the small-cluster reassignment map.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTypeModel {
    pub embedder: EmbeddingProvider,
    pub reducer: Reducer,
    /// `K × d'`.
    pub centroids: Matrix,
    pub labels: Vec<String>,
    pub reassignment_map: BTreeMap<usize, usize>,
    pub min_cluster_size: usize,
    pub fit_seed: u64,
}

#[derive(Serialize, Deserialize)]
struct TaskModelFile {
    schema_version: String,
    d: usize,
    d_prime: usize,
    #[serde(rename = "K")]
    k: usize,
    seed: u64,
    delta: usize,
    center: Vec<f64>,
    basis: Vec<f64>,
    centroids: Vec<f64>,
    labels: Vec<String>,
    reassignment_map: BTreeMap<usize, usize>,
    embedder: EmbeddingProvider,
}

impl TaskTypeModel {
    pub fn cluster_count(&self) -> usize {
        self.centroids.rows()
    }

    pub fn is_surviving(&self, cluster: usize) -> bool {
        cluster < self.cluster_count() && !self.reassignment_map.contains_key(&cluster)
    }

    pub fn surviving_mask(&self) -> Vec<bool> {
        (0..self.cluster_count()).map(|c| self.is_surviving(c)).collect()
    }

    pub fn surviving_clusters(&self) -> Vec<usize> {
        (0..self.cluster_count()).filter(|&c| self.is_surviving(c)).collect()
    }

    /// Where a cluster's members went: itself if surviving.
    pub fn resolve(&self, cluster: usize) -> Option<usize> {
        if cluster >= self.cluster_count() {
            None
        } else {
            Some(self.reassignment_map.get(&cluster).copied().unwrap_or(cluster))
        }
    }

    pub fn keywords(&self, cluster: usize) -> Vec<String> {
        self.labels
            .get(cluster)
            .map(|l| labels::keywords_from_label(l))
            .unwrap_or_default()
    }

    /// Nearest surviving centroid of an already-reduced point.
    pub fn assign_point(&self, x: &[f64]) -> TypeAssignment {
        let mut best: Option<(usize, f64)> = None;
        let mut second: Option<(usize, f64)> = None;
        for c in self.surviving_clusters() {
            let d = crate::matrix::squared_distance(x, self.centroids.row(c)).sqrt();
            match best {
                Some((_, bd)) if d >= bd => {
                    if second.is_none_or(|(_, sd)| d < sd) {
                        second = Some((c, d));
                    }
                }
                _ => {
                    second = best;
                    best = Some((c, d));
                }
            }
        }
        let (cluster, d1) = best.expect("a fitted model has at least one surviving cluster");
        let confidence = match second {
            Some((_, d2)) if d1 + d2 > 0.0 => d2 / (d1 + d2),
            _ => 1.0,
        };
        TypeAssignment {
            cluster,
            confidence,
            distance_to_centroid: d1,
            runner_up_cluster: second.map(|s| s.0),
            runner_up_distance: second.map(|s| s.1),
            keywords: self.keywords(cluster),
        }
    }

    pub fn reduce_embedding(&self, embedding: &[f64]) -> Result<Vec<f64>, TaskTypingError> {
        Ok(self.reducer.reduce(embedding)?)
    }

    /// Type a prompt: embed, reduce, nearest surviving centroid.
    pub fn assign(
        &self,
        prompt_text: &str,
        provider: &EmbeddingProvider,
    ) -> Result<TypeAssignment, TaskTypingError> {
        if prompt_text.trim().is_empty() {
            return Err(TaskTypingError::EmptyPrompt);
        }
        if provider.dimension != self.reducer.input_dim {
            return Err(TaskTypingError::DimensionMismatch {
                provider: provider.dimension,
                model: self.reducer.input_dim,
            });
        }
        let e = provider.embed(prompt_text)?;
        let x = self.reducer.reduce(&e)?;
        Ok(self.assign_point(&x))
    }

    fn to_file(&self) -> TaskModelFile {
        TaskModelFile {
            schema_version: TASK_MODEL_SCHEMA_VERSION.to_string(),
            d: self.reducer.input_dim,
            d_prime: self.reducer.output_dim,
            k: self.cluster_count(),
            seed: self.fit_seed,
            delta: self.min_cluster_size,
            center: self.reducer.center.clone(),
            basis: self.reducer.basis.clone(),
            centroids: self.centroids.as_slice().to_vec(),
            labels: self.labels.clone(),
            reassignment_map: self.reassignment_map.clone(),
            embedder: self.embedder.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("task model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TaskTypingError> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| TaskTypingError::Corrupt(e.to_string()))?;
        let found = raw
            .get("schema_version")
            .and_then(|v| v.as_str())
            .unwrap_or_default();
        if found != TASK_MODEL_SCHEMA_VERSION {
            return Err(TaskTypingError::VersionMismatch {
                found: found.to_string(),
                expected: TASK_MODEL_SCHEMA_VERSION.to_string(),
            });
        }
        let f: TaskModelFile =
            serde_json::from_value(raw).map_err(|e| TaskTypingError::Corrupt(e.to_string()))?;
        let corrupt = |m: &str| Err(TaskTypingError::Corrupt(m.to_string()));
        if f.center.len() != f.d
            || f.basis.len() != f.d * f.d_prime
            || f.centroids.len() != f.k * f.d_prime
        {
            return corrupt("array lengths disagree with d, d_prime, K");
        }
        if f.labels.len() != f.k || f.k == 0 {
            return corrupt("label count disagrees with K");
        }
        if f.embedder.dimension != f.d {
            return corrupt("embedder dimension disagrees with d");
        }
        for (&from, &to) in &f.reassignment_map {
            if from >= f.k || to >= f.k || f.reassignment_map.contains_key(&to) {
                return corrupt("reassignment_map must map retired clusters onto surviving ones");
            }
        }
        Ok(TaskTypeModel {
            embedder: f.embedder,
            reducer: Reducer {
                input_dim: f.d,
                output_dim: f.d_prime,
                basis: f.basis,
                center: f.center,
            },
            centroids: Matrix::from_row_major(f.k, f.d_prime, f.centroids),
            labels: f.labels,
            reassignment_map: f.reassignment_map,
            min_cluster_size: f.delta,
            fit_seed: f.seed,
        })
    }

    /// Content fingerprint; signal artifacts record it to pin the model they
    /// were computed against.
    pub fn version(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_file()).expect("task model serializes");
        let digest = Sha256::digest(&bytes);
        format!("tm-{}", &hex::encode(digest)[..16])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TaskTypingError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TaskTypingError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Everything produced by fitting a task model on a corpus.
#[derive(Debug, Clone)]
pub struct TaskModelFit {
    pub model: TaskTypeModel,
    /// Final per-prompt cluster after reassignment.
    pub assignments: Vec<usize>,
    pub kmeans: KMeansFit,
    pub captured_variance: f64,
}

/// Fit reducer, K-means and small-cluster repair on precomputed embeddings.
pub fn fit_task_model<S: AsRef<str>>(
    prompts: &[S],
    embeddings: &Matrix,
    embedder: &EmbeddingProvider,
    config: &TaskTypingConfig,
) -> Result<TaskModelFit, TaskTypingError> {
    if prompts.len() != embeddings.rows() {
        return Err(TaskTypingError::Misaligned {
            prompts: prompts.len(),
            rows: embeddings.rows(),
        });
    }
    if embeddings.cols() != embedder.dimension {
        return Err(TaskTypingError::DimensionMismatch {
            provider: embedder.dimension,
            model: embeddings.cols(),
        });
    }
    let pca = fit_pca(embeddings, config.reduced_dim)?;
    let reduced = pca.reducer.reduce_all(embeddings)?;
    let km = kmeans::fit_kmeans_with(&reduced, config.cluster_count, config.seed, config.max_iters)?;
    let delta = config
        .min_cluster_size
        .unwrap_or_else(|| default_min_cluster_size(prompts.len()));
    let re = reassign_small_clusters(&km.centroids, &km.assignments, delta)?;

    let k = config.cluster_count;
    let mut groups: Vec<Vec<&str>> = vec![Vec::new(); k];
    for (i, p) in prompts.iter().enumerate() {
        let c = if re.surviving[km.assignments[i]] {
            re.assignments[i]
        } else {
            km.assignments[i]
        };
        groups[c].push(p.as_ref());
    }
    let labels = label_clusters(&groups);

    let model = TaskTypeModel {
        embedder: embedder.clone(),
        reducer: pca.reducer.clone(),
        centroids: km.centroids.clone(),
        labels,
        reassignment_map: re.map,
        min_cluster_size: delta,
        fit_seed: config.seed,
    };
    Ok(TaskModelFit {
        model,
        assignments: re.assignments,
        captured_variance: pca.captured_fraction(),
        kmeans: km,
    })
}

/// Embed with `embedder` and fit.
pub fn fit_task_model_from_prompts<S: AsRef<str>>(
    prompts: &[S],
    embedder: &EmbeddingProvider,
    config: &TaskTypingConfig,
) -> Result<TaskModelFit, TaskTypingError> {
    let rows = embedder.embed_all(prompts)?;
    let m = if rows.is_empty() {
        Matrix::zeros(0, embedder.dimension)
    } else {
        Matrix::from_rows(&rows).ok_or(TaskTypingError::RaggedEmbeddings)?
    };
    fit_task_model(prompts, &m, embedder, config)
}
