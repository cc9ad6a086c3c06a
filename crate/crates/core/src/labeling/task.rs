use std::collections::HashMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::learn::SelectionPolicy;

pub const MAX_VOTES: usize = 3;

/// Priority of every task while no model is published.
pub const COLD_START_PRIORITY: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Open,
    Resolved,
    Discarded,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LabelVote {
    pub task_id: String,
    pub labeler_id: String,
    pub category: String,
    pub voted_at: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub labeler: String,
    pub until: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LabelTask {
    pub id: String,
    pub seq: u64,
    pub message_id: String,
    pub schema_id: String,
    pub status: TaskStatus,
    /// Lower is served first.
    pub priority: f64,
    pub votes: Vec<LabelVote>,
    pub resolved_category: Option<String>,
    pub dedup_key: String,
    pub received_at: DateTime<Utc>,
    pub closed_at: Option<DateTime<Utc>>,
    /// Leases are not durable; a restart frees every task.
    #[serde(skip)]
    pub lease: Option<Lease>,
}

impl LabelTask {
    pub fn has_voted(&self, labeler: &str) -> bool {
        self.votes.iter().any(|v| v.labeler_id == labeler)
    }

    pub fn is_open(&self) -> bool {
        self.status == TaskStatus::Open
    }
}

/// A finalized human label for one message under one schema.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResolvedLabel {
    pub message_id: String,
    pub schema_id: String,
    pub category: String,
    pub resolved_at: DateTime<Utc>,
    /// Resolution order within the engine; drives the retrain counter.
    pub seq: u64,
    pub vote_count: usize,
    #[serde(default)]
    pub deleted: bool,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaskOutcome {
    Open,
    Resolved(String),
    Discarded,
}

/// 2-of-3 rule over a multiset of votes: a category with two votes wins,
/// three distinct votes discard, anything else stays open.
pub fn aggregate<S: AsRef<str>>(votes: &[S]) -> TaskOutcome {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for v in votes {
        *counts.entry(v.as_ref()).or_default() += 1;
    }
    if let Some((cat, _)) = counts.iter().find(|(_, &n)| n >= 2) {
        return TaskOutcome::Resolved(cat.to_string());
    }
    if votes.len() >= MAX_VOTES {
        TaskOutcome::Discarded
    } else {
        TaskOutcome::Open
    }
}

/// Queue priority for a message given the current model's confidence.
///
/// Without a model every task sits at 0.5 and ties fall back to arrival
/// order. Under uncertainty selection a confidence at or below the threshold
/// becomes the priority itself; anything above it is pushed to `1 + conf`,
/// behind the whole uncertain pool. Random selection uses `random_draw`.
pub fn priority_for(
    confidence: Option<f64>,
    threshold: f64,
    policy: SelectionPolicy,
    random_draw: f64,
) -> f64 {
    match (policy, confidence) {
        (SelectionPolicy::Random, _) => random_draw,
        (_, None) => COLD_START_PRIORITY,
        (SelectionPolicy::Uncertainty, Some(c)) if c <= threshold => c,
        (SelectionPolicy::Uncertainty, Some(c)) => 1.0 + c,
    }
}
