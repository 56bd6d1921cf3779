//! Offline pipeline: records → task model → signal artifact → probe reports.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ingest::ComparisonRecord;
use crate::matrix::Matrix;
use crate::probes::{self, ProbeConfig, ProbeError, ProbeReport};
use crate::signals::{SignalArtifact, SignalConfig, SignalError};
use crate::tasktyping::{
    fit_task_model, fit_task_model_from_prompts, EmbeddingProvider, TaskModelFit, TaskTypeModel, TaskTypingConfig,
    TaskTypingError,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    TaskTyping(#[from] TaskTypingError),
    #[error(transparent)]
    Signals(#[from] SignalError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error("record {0} has no prompt embedding")]
    MissingEmbedding(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub embedder: EmbeddingProvider,
    pub typing: TaskTypingConfig,
    /// Cluster on the records' own `prompt_embedding` instead of embedding
    /// the prompt text.
    pub use_ingested_embeddings: bool,
    pub signals: SignalConfig,
    pub probe: ProbeConfig,
    /// Stamped into the signal artifact; fixed so reruns are byte-identical.
    pub created_at: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            embedder: EmbeddingProvider::hash(crate::tasktyping::embed::DEFAULT_EMBEDDING_DIM, 0),
            typing: TaskTypingConfig::default(),
            use_ingested_embeddings: false,
            signals: SignalConfig::default(),
            probe: ProbeConfig::default(),
            created_at: 0,
        }
    }
}

fn ingested_matrix(records: &[ComparisonRecord]) -> Result<Matrix, PipelineError> {
    let rows: Vec<&[f64]> = records
        .iter()
        .map(|r| {
            r.prompt_embedding
                .as_deref()
                .ok_or_else(|| PipelineError::MissingEmbedding(r.record_id.clone()))
        })
        .collect::<Result<_, _>>()?;
    Matrix::from_rows(&rows).ok_or(PipelineError::TaskTyping(TaskTypingError::RaggedEmbeddings))
}

pub fn fit_clusters(
    records: &[ComparisonRecord],
    embedder: &EmbeddingProvider,
    typing: &TaskTypingConfig,
    use_ingested: bool,
) -> Result<TaskModelFit, PipelineError> {
    let prompts: Vec<&str> = records.iter().map(|r| r.prompt_text.as_str()).collect();
    if use_ingested {
        let m = ingested_matrix(records)?;
        Ok(fit_task_model(&prompts, &m, embedder, typing)?)
    } else {
        Ok(fit_task_model_from_prompts(&prompts, embedder, typing)?)
    }
}

/// Type every record the same way a live prompt would be typed.
pub fn assign_records(
    records: &[ComparisonRecord],
    model: &TaskTypeModel,
    use_ingested: bool,
) -> Result<Vec<usize>, PipelineError> {
    if !use_ingested {
        return Ok(probes::assign_clusters(records, model)?);
    }
    records
        .iter()
        .map(|r| {
            let e = r
                .prompt_embedding
                .as_deref()
                .ok_or_else(|| PipelineError::MissingEmbedding(r.record_id.clone()))?;
            Ok(model.assign_point(&model.reduce_embedding(e)?).cluster)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PipelineOutputs {
    pub task_model: TaskTypeModel,
    pub clusters: Vec<usize>,
    pub signals: SignalArtifact,
    pub probe_a: ProbeReport,
    pub probe_b: ProbeReport,
}

pub fn run_pipeline(records: &[ComparisonRecord], config: &PipelineConfig) -> Result<PipelineOutputs, PipelineError> {
    let fit = fit_clusters(records, &config.embedder, &config.typing, config.use_ingested_embeddings)?;
    let model = fit.model;
    let clusters = assign_records(records, &model, config.use_ingested_embeddings)?;
    let signals = SignalArtifact::build(records, &clusters, model.version(), config.created_at, config.signals)?;
    let k = model.cluster_count();
    let probe_a = probes::run_probe_a_with_clusters(records, &clusters, k, &config.probe)?;
    let probe_b = probes::run_probe_b_with_clusters(records, &clusters, k, &config.probe)?;
    Ok(PipelineOutputs {
        task_model: model,
        clusters,
        signals,
        probe_a,
        probe_b,
    })
}

pub const TASK_MODEL_FILE: &str = "task_model.json";
pub const SIGNALS_FILE: &str = "signals.json";
pub const PROBE_A_FILE: &str = "probe_a.json";
pub const PROBE_B_FILE: &str = "probe_b.json";

fn write(path: PathBuf, text: &str) -> Result<PathBuf, PipelineError> {
    std::fs::write(&path, text).map_err(|source| PipelineError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Write the four artifacts into `dir` under fixed names.
pub fn write_outputs(dir: &Path, out: &PipelineOutputs) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(vec![
        write(dir.join(TASK_MODEL_FILE), &out.task_model.to_json())?,
        write(dir.join(SIGNALS_FILE), &out.signals.to_json())?,
        write(dir.join(PROBE_A_FILE), &out.probe_a.to_json()?)?,
        write(dir.join(PROBE_B_FILE), &out.probe_b.to_json()?)?,
    ])
}
