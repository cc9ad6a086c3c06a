//! Collections and the messages pushed into them.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_CHAR_LIMIT: usize = 140;

/// Minimum length of the random push endpoint token.
pub const ENDPOINT_TOKEN_LEN: usize = 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionStatus {
    Running,
    Paused,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub received: u64,
    pub classified: u64,
    pub labeled: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Collection {
    pub id: String,
    pub name: String,
    pub endpoint_path: String,
    pub created_at: DateTime<Utc>,
    pub status: CollectionStatus,
    pub char_limit: usize,
    /// Rebuilt from stored messages on restart; stored values are ignored.
    #[serde(default)]
    pub counters: Counters,
}

impl Collection {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Validation(
                "collection name must be non-empty".into(),
            ));
        }
        if self.char_limit == 0 {
            return Err(Error::Validation("charLimit must be at least 1".into()));
        }
        if self.endpoint_path.len() < 16 {
            return Err(Error::Validation("endpoint token too short".into()));
        }
        Ok(())
    }
}

/// One inbound SMS as stored after ingest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ShortMessage {
    pub id: String,
    /// Global arrival sequence number.
    pub seq: u64,
    pub collection_id: String,
    pub text: String,
    pub sender_ref: String,
    pub received_at: DateTime<Utc>,
    #[serde(default)]
    pub source_meta: BTreeMap<String, String>,
}

impl ShortMessage {
    pub fn validate(&self) -> Result<()> {
        if self.text.trim().is_empty() {
            return Err(Error::Validation("message text is empty".into()));
        }
        Ok(())
    }
}

/// Body of a push request. `sourceMeta` is stored verbatim.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PushPayload {
    pub text: String,
    #[serde(default)]
    pub sender_ref: Option<String>,
    #[serde(default)]
    pub source_meta: BTreeMap<String, String>,
}

impl PushPayload {
    pub fn text(text: impl Into<String>) -> Self {
        PushPayload {
            text: text.into(),
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Ack {
    pub message_id: String,
}

/// Gateway acceptance rule: non-blank and at most `char_limit` characters.
pub fn check_text(text: &str, char_limit: usize) -> Result<()> {
    if text.trim().is_empty() {
        return Err(Error::Rejected("text is empty".into()));
    }
    let n = text.chars().count();
    if n > char_limit {
        return Err(Error::Rejected(format!(
            "text has {n} characters, limit is {char_limit}"
        )));
    }
    Ok(())
}
