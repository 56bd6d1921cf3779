//! Task-aware delegation: capability profiles and coordination-risk cues
//! derived from pairwise preference votes, validated by predictive probes and
//! served through a human-in-the-loop delegation protocol.

pub mod delegation;
pub mod ingest;
pub mod matrix;
pub mod pipeline;
pub mod probes;
pub mod service;
pub mod signals;
pub mod tasktyping;
pub mod text;
