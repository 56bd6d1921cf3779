//! Keyword labels for clusters.

use std::collections::HashMap;

use crate::text;

pub const KEYWORDS_PER_CLUSTER: usize = 5;
pub const UNLABELED: &str = "unlabeled";
const SEPARATOR: &str = ", ";

/// Top tokens by frequency across a cluster's prompts, ties broken
/// lexicographically. Empty when every token is a stop word.
pub fn top_keywords<S: AsRef<str>>(prompts: &[S], limit: usize) -> Vec<String> {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for p in prompts {
        for t in text::content_tokens(p.as_ref()) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(limit).map(|(t, _)| t).collect()
}

pub fn label_from_keywords(keywords: &[String]) -> String {
    if keywords.is_empty() {
        UNLABELED.to_string()
    } else {
        keywords.join(SEPARATOR)
    }
}

/// Inverse of [`label_from_keywords`].
pub fn keywords_from_label(label: &str) -> Vec<String> {
    if label == UNLABELED || label.is_empty() {
        Vec::new()
    } else {
        label.split(SEPARATOR).map(str::to_string).collect()
    }
}

/// One label per group of prompts.
pub fn label_clusters<S: AsRef<str>>(groups: &[Vec<S>]) -> Vec<String> {
    groups
        .iter()
        .map(|g| label_from_keywords(&top_keywords(g, KEYWORDS_PER_CLUSTER)))
        .collect()
}
