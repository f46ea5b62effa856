use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::Timestamp;

/// What a delta is measured against: the rendered schema lines of a route
/// and its documentation embedding.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RouteSnapshot {
    pub lines: Vec<String>,
    pub embedding: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaParams {
    pub w_lines: f64,
    pub w_embed: f64,
    /// Raw scores below this are treated as cosmetic and score zero.
    pub epsilon: f64,
}

impl Default for DeltaParams {
    fn default() -> Self {
        DeltaParams { w_lines: 0.5, w_embed: 0.5, epsilon: 0.01 }
    }
}

/// One accepted contribution and its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaCommit {
    pub contributor: String,
    pub skill_id: String,
    pub score: f64,
    pub changed_lines: usize,
    pub at: Timestamp,
}

/// Lines present on one side but not the other, counted as multisets.
pub fn changed_lines(before: &[String], after: &[String]) -> usize {
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for l in after {
        *counts.entry(l).or_default() += 1;
    }
    for l in before {
        *counts.entry(l).or_default() -= 1;
    }
    counts.values().map(|c| c.unsigned_abs() as usize).sum()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// `w_lines * changed / max(1, lines_after) + w_embed * (1 - cos)`, zeroed
/// below epsilon.
pub fn delta_score(before: &RouteSnapshot, after: &RouteSnapshot, p: &DeltaParams) -> f64 {
    let changed = changed_lines(&before.lines, &after.lines) as f64;
    let line_term = changed / after.lines.len().max(1) as f64;
    let embed_term = if before.embedding.is_empty() && after.embedding.is_empty() {
        0.0
    } else {
        (1.0 - cosine(&before.embedding, &after.embedding)).max(0.0)
    };
    let raw = p.w_lines * line_term + p.w_embed * embed_term;
    if raw < p.epsilon {
        0.0
    } else {
        raw
    }
}
