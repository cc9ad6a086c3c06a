//! Stored and returned shapes owned by the engine.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::Counters;
use crate::labeling::TaskStatus;
use crate::learn::{Category, CategoryAuc};
use crate::store::{Entity, Kind};

/// A model prediction attached to a message, stamped with the model version
/// that produced it. Never overwritten by later models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Classification {
    pub message_id: String,
    pub schema_id: String,
    pub category: String,
    pub confidence: f64,
    pub model_version: u64,
    /// Aligned with the schema's category order.
    pub scores: Vec<f64>,
    pub classified_at: DateTime<Utc>,
}

impl Entity for Classification {
    const KIND: Kind = Kind::Classification;
    fn key(&self) -> String {
        format!("{}/{}", self.schema_id, self.message_id)
    }
    fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.confidence) || self.model_version == 0 {
            return Err(Error::Validation(format!(
                "bad classification for {}",
                self.message_id
            )));
        }
        Ok(())
    }
}

/// Per-schema training bookkeeping. Labels resolved after
/// `trained_through_seq` are the ones counting toward the next retrain.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LearnerState {
    pub schema_id: String,
    pub model_version: u64,
    pub trained_through_seq: u64,
    pub trainings: u64,
    pub last_warning: Option<String>,
}

impl Entity for LearnerState {
    const KIND: Kind = Kind::Learner;
    fn key(&self) -> String {
        self.schema_id.clone()
    }
}

/// What a labeler sees when served a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TaskView {
    pub task_id: String,
    pub message_id: String,
    pub schema_id: String,
    pub text: String,
    pub categories: Vec<Category>,
    pub votes_cast: usize,
    pub priority: f64,
    pub lease_until: DateTime<Utc>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RetrainOutcome {
    pub schema_id: String,
    pub retrained: bool,
    pub model_version: Option<u64>,
    pub warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct VoteReceipt {
    pub task_id: String,
    pub status: TaskStatus,
    pub resolved_category: Option<String>,
    /// Present when the vote triggered an inline retrain check.
    pub retrain: Option<RetrainOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LabeledItem {
    pub message_id: String,
    pub text: String,
    pub category: String,
    pub resolved_at: DateTime<Utc>,
    pub vote_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LabeledPage {
    pub schema_id: String,
    pub page: usize,
    pub page_size: usize,
    pub total: usize,
    pub items: Vec<LabeledItem>,
}

/// Current model quality for a schema. Version 0 means no model yet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ModelMetrics {
    pub schema_id: String,
    pub version: u64,
    pub macro_auc: Option<f64>,
    pub per_category_auc: Vec<CategoryAuc>,
    pub train_size: usize,
    pub holdout_size: usize,
    pub labeled_total: usize,
    pub labels_since_training: usize,
    pub retrain_every: usize,
    pub trainings: u64,
    pub trained_at: Option<DateTime<Utc>>,
    pub last_warning: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CategoryShare {
    pub category: String,
    pub proportion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CollectionStats {
    pub collection_id: String,
    pub schema_id: String,
    pub counters: Counters,
    pub classified_by_schema: u64,
    pub open_tasks: usize,
    pub model_version: u64,
    pub proportions: Vec<CategoryShare>,
}
