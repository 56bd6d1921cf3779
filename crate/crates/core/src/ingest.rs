//! Comparison dataset ingestion.
//!
//! Reads the line-delimited JSON comparison schema, validates each record, and
//! summarizes datasets. One line holds one pairwise preference vote:
//!
//! ```text
//! {"id":"r1","prompt":"sort a list","model_a":"m1","model_b":"m2","winner":"model_a"}
//! ```
//!
//! Optional fields are `prompt_embedding`, `response_embedding_diff` (exactly
//! [`RESPONSE_DIFF_DIM`] numbers) and `difficulty` (in `[1, 10]`). Unknown
//! fields are ignored.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length of the response-embedding difference vector carried by a record.
pub const RESPONSE_DIFF_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("unreadable source: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("unknown outcome label {0:?}")]
    UnknownOutcome(String),
    #[error("invalid record: {0}")]
    Invalid(String),
}

/// Outcome of a pairwise vote, in the canonical storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    #[serde(rename = "model_a")]
    AWins,
    #[serde(rename = "model_b")]
    BWins,
    #[serde(rename = "tie")]
    Tie,
    #[serde(rename = "tie (bothbad)")]
    TieBothBad,
    #[serde(rename = "invalid")]
    Invalid,
}

impl Outcome {
    pub const ALL: [Outcome; 5] = [
        Outcome::AWins,
        Outcome::BWins,
        Outcome::Tie,
        Outcome::TieBothBad,
        Outcome::Invalid,
    ];

    /// Position in [`Outcome::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    /// Wire label in the source alphabet.
    pub fn label(self) -> &'static str {
        match self {
            Outcome::AWins => "model_a",
            Outcome::BWins => "model_b",
            Outcome::Tie => "tie",
            Outcome::TieBothBad => "tie (bothbad)",
            Outcome::Invalid => "invalid",
        }
    }

    pub fn is_tie(self) -> bool {
        matches!(self, Outcome::Tie | Outcome::TieBothBad)
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Outcome {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        normalize_outcome(s)
    }
}

/// Map a source label onto the outcome alphabet.
pub fn normalize_outcome(raw_label: &str) -> Result<Outcome, IngestError> {
    Outcome::ALL
        .into_iter()
        .find(|o| o.label() == raw_label)
        .ok_or_else(|| IngestError::UnknownOutcome(raw_label.to_string()))
}

/// One validated pairwise preference event.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRecord {
    pub record_id: String,
    pub prompt_text: String,
    pub model_a: String,
    pub model_b: String,
    pub outcome: Outcome,
    pub prompt_embedding: Option<Vec<f64>>,
    pub response_embedding_diff: Option<Vec<f64>>,
    pub difficulty: Option<f64>,
    /// Character count of `prompt_text`.
    pub prompt_length: usize,
}

impl ComparisonRecord {
    /// Build and validate a record; `prompt_length` is derived from the prompt.
    pub fn new(
        record_id: impl Into<String>,
        prompt_text: impl Into<String>,
        model_a: impl Into<String>,
        model_b: impl Into<String>,
        outcome: Outcome,
    ) -> Result<Self, IngestError> {
        let prompt_text = prompt_text.into();
        let record = ComparisonRecord {
            record_id: record_id.into(),
            prompt_length: prompt_text.chars().count(),
            prompt_text,
            model_a: model_a.into(),
            model_b: model_b.into(),
            outcome,
            prompt_embedding: None,
            response_embedding_diff: None,
            difficulty: None,
        };
        record.validate()?;
        Ok(record)
    }

    pub fn with_difficulty(mut self, difficulty: f64) -> Result<Self, IngestError> {
        self.difficulty = Some(difficulty);
        self.validate()?;
        Ok(self)
    }

    pub fn with_response_diff(mut self, diff: Vec<f64>) -> Result<Self, IngestError> {
        self.response_embedding_diff = Some(diff);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.model_a == self.model_b {
            return Err(IngestError::Invalid(format!(
                "contestants identical ({})",
                self.model_a
            )));
        }
        if self.prompt_length != self.prompt_text.chars().count() {
            return Err(IngestError::Invalid(
                "prompt_length does not match prompt".into(),
            ));
        }
        if let Some(diff) = &self.response_embedding_diff {
            if diff.len() != RESPONSE_DIFF_DIM {
                return Err(IngestError::Invalid(format!(
                    "response_embedding_diff has length {}, expected {RESPONSE_DIFF_DIM}",
                    diff.len()
                )));
            }
        }
        if let Some(d) = self.difficulty {
            if !(1.0..=10.0).contains(&d) {
                return Err(IngestError::Invalid(format!(
                    "difficulty {d} outside [1, 10]"
                )));
            }
        }
        Ok(())
    }

    /// The record in its wire form.
    pub fn to_wire(&self) -> WireRecord {
        WireRecord {
            id: self.record_id.clone(),
            prompt: self.prompt_text.clone(),
            model_a: self.model_a.clone(),
            model_b: self.model_b.clone(),
            winner: self.outcome.label().to_string(),
            prompt_embedding: self.prompt_embedding.clone(),
            response_embedding_diff: self.response_embedding_diff.clone(),
            difficulty: self.difficulty,
        }
    }
}

/// JSONL wire schema of a comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireRecord {
    pub id: String,
    pub prompt: String,
    pub model_a: String,
    pub model_b: String,
    pub winner: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_embedding: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_embedding_diff: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<f64>,
}

impl TryFrom<WireRecord> for ComparisonRecord {
    type Error = IngestError;

    fn try_from(w: WireRecord) -> Result<Self, Self::Error> {
        let outcome = normalize_outcome(&w.winner)?;
        let record = ComparisonRecord {
            record_id: w.id,
            prompt_length: w.prompt.chars().count(),
            prompt_text: w.prompt,
            model_a: w.model_a,
            model_b: w.model_b,
            outcome,
            prompt_embedding: w.prompt_embedding,
            response_embedding_diff: w.response_embedding_diff,
            difficulty: w.difficulty,
        };
        record.validate()?;
        Ok(record)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Abort on the first malformed line.
    #[default]
    Strict,
    /// Skip malformed lines and report them.
    Lenient,
}

/// A line rejected in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedComparisons {
    pub records: Vec<ComparisonRecord>,
    pub skipped: Vec<SkippedLine>,
}

impl ParsedComparisons {
    pub fn skip_count(&self) -> usize {
        self.skipped.len()
    }
}

fn parse_line(text: &str) -> Result<ComparisonRecord, String> {
    let wire: WireRecord = serde_json::from_str(text).map_err(|e| e.to_string())?;
    ComparisonRecord::try_from(wire).map_err(|e| match e {
        IngestError::Invalid(msg) => msg,
        other => other.to_string(),
    })
}

/// Parse a JSONL comparison stream. Blank lines are ignored; line numbers are
/// 1-based.
pub fn parse_comparisons<R: BufRead>(
    source: R,
    mode: ParseMode,
) -> Result<ParsedComparisons, IngestError> {
    let mut out = ParsedComparisons::default();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim_end_matches('\r');
        if text.trim().is_empty() {
            continue;
        }
        match parse_line(text) {
            Ok(record) => out.records.push(record),
            Err(reason) => match mode {
                ParseMode::Strict => {
                    return Err(IngestError::Parse {
                        line: line_no,
                        reason,
                    })
                }
                ParseMode::Lenient => out.skipped.push(SkippedLine {
                    line: line_no,
                    reason,
                }),
            },
        }
    }
    Ok(out)
}

/// Parse a JSONL file from disk.
pub fn read_comparisons(
    path: impl AsRef<std::path::Path>,
    mode: ParseMode,
) -> Result<ParsedComparisons, IngestError> {
    let file = std::fs::File::open(path)?;
    parse_comparisons(std::io::BufReader::new(file), mode)
}

/// Write records in the wire schema, one per line.
pub fn write_comparisons<W: Write>(
    mut sink: W,
    records: &[ComparisonRecord],
) -> Result<(), IngestError> {
    for r in records {
        let line = serde_json::to_string(&r.to_wire())
            .map_err(|e| IngestError::Invalid(e.to_string()))?;
        sink.write_all(line.as_bytes())?;
        sink.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub record_count: usize,
    pub model_ids: Vec<String>,
    pub outcome_counts: BTreeMap<Outcome, usize>,
    pub records_with_embeddings: usize,
    pub records_with_difficulty: usize,
}

/// Exact counts over a record list. Every outcome appears in `outcome_counts`,
/// zero-valued when absent.
pub fn summarize(records: &[ComparisonRecord]) -> DatasetSummary {
    let mut outcome_counts: BTreeMap<Outcome, usize> =
        Outcome::ALL.into_iter().map(|o| (o, 0)).collect();
    let mut models = std::collections::BTreeSet::new();
    let mut with_emb = 0;
    let mut with_diff = 0;
    for r in records {
        *outcome_counts.entry(r.outcome).or_default() += 1;
        models.insert(r.model_a.clone());
        models.insert(r.model_b.clone());
        if r.prompt_embedding.is_some() {
            with_emb += 1;
        }
        if r.difficulty.is_some() {
            with_diff += 1;
        }
    }
    DatasetSummary {
        record_count: records.len(),
        model_ids: models.into_iter().collect(),
        outcome_counts,
        records_with_embeddings: with_emb,
        records_with_difficulty: with_diff,
    }
}

/// Sorted, deduplicated model ids appearing in `records`.
pub fn model_ids(records: &[ComparisonRecord]) -> Vec<String> {
    summarize(records).model_ids
}
