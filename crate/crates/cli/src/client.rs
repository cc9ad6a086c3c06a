//! Blocking HTTP client for a running service, plus the harness backends
//! built on it.

use std::time::Duration;

use reqwest::blocking::{Client, RequestBuilder, Response};
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use smstriage_core::engine::{CollectionStats, ModelMetrics, TaskView, VoteReceipt};
use smstriage_core::gateway::{Ack, Collection, PushPayload};
use smstriage_core::harness::{LabelingBackend, PushError, PushTarget};
use smstriage_core::learn::{ClassifierSchema, SchemaSpec};
use smstriage_core::{Error, Result};

use crate::server::{ErrorBody, VoteRequest};

#[derive(Clone, Debug)]
pub struct ServiceClient {
    base: String,
    http: Client,
}

impl ServiceClient {
    pub fn new(base_url: &str) -> Result<Self> {
        let http = Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(transport)?;
        Ok(ServiceClient {
            base: base_url.trim_end_matches('/').to_string(),
            http,
        })
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn send<T: DeserializeOwned>(&self, req: RequestBuilder) -> Result<T> {
        let resp = req.send().map_err(transport)?;
        decode(resp)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        self.send(self.http.get(self.url(path)))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        self.send(self.http.post(self.url(path)).json(body))
    }

    pub fn create_collection(&self, name: &str, char_limit: Option<usize>) -> Result<Collection> {
        let mut body = serde_json::json!({ "name": name });
        if let Some(n) = char_limit {
            body["charLimit"] = n.into();
        }
        self.post("/collections", &body)
    }

    pub fn collection(&self, id: &str) -> Result<Collection> {
        self.get(&format!("/collections/{id}"))
    }

    pub fn classifiers(&self, collection_id: &str) -> Result<Vec<ClassifierSchema>> {
        self.get(&format!("/collections/{collection_id}/classifiers"))
    }

    pub fn create_classifier(
        &self,
        collection_id: &str,
        spec: &SchemaSpec,
    ) -> Result<ClassifierSchema> {
        let mut body = serde_json::to_value(spec)?;
        body["collectionId"] = collection_id.into();
        self.post("/classifiers", &body)
    }

    pub fn metrics(&self, schema_id: &str) -> Result<ModelMetrics> {
        self.get(&format!("/classifiers/{schema_id}/metrics"))
    }

    pub fn stats(&self, collection_id: &str, schema_id: &str) -> Result<CollectionStats> {
        self.get(&format!("/stats/{collection_id}/{schema_id}"))
    }

    pub fn next_task(&self, labeler: &str, schema: Option<&str>) -> Result<Option<TaskView>> {
        let mut query = vec![("labeler", labeler)];
        if let Some(s) = schema {
            query.push(("schema", s));
        }
        let resp = self
            .http
            .get(self.url("/tasks/next"))
            .query(&query)
            .send()
            .map_err(transport)?;
        if resp.status() == StatusCode::NO_CONTENT {
            return Ok(None);
        }
        decode(resp).map(Some)
    }

    pub fn vote(&self, task_id: &str, labeler: &str, category: &str) -> Result<VoteReceipt> {
        let body = VoteRequest {
            labeler: labeler.to_string(),
            category: category.to_string(),
        };
        self.post(&format!("/tasks/{task_id}/vote"), &body)
    }

    pub fn push(&self, endpoint_path: &str, payload: &PushPayload) -> Result<Ack> {
        self.post(&format!("/push/{endpoint_path}"), payload)
    }
}

fn transport(e: reqwest::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn decode<T: DeserializeOwned>(resp: Response) -> Result<T> {
    let status = resp.status();
    let bytes = resp.bytes().map_err(transport)?;
    if status.is_success() {
        return Ok(serde_json::from_slice(&bytes)?);
    }
    let (code, message) = match serde_json::from_slice::<ErrorBody>(&bytes) {
        Ok(b) => (b.error.code, b.error.message),
        Err(_) => (
            "http".to_string(),
            String::from_utf8_lossy(&bytes).into_owned(),
        ),
    };
    // Codes the harness reacts to come back as their typed variants.
    Err(match code.as_str() {
        "task_closed" => Error::TaskClosed(message),
        "duplicate_vote" => Error::DuplicateVote {
            task: String::new(),
            labeler: message,
        },
        _ => Error::Remote {
            status: status.as_u16(),
            code,
            message,
        },
    })
}

/// Push target addressed by a full push URL, `.../push/{endpointPath}`.
#[derive(Clone, Debug)]
pub struct HttpPusher {
    http: Client,
    url: String,
}

impl HttpPusher {
    pub fn new(push_url: &str) -> Result<Self> {
        if !push_url.contains("/push/") {
            return Err(Error::Validation(format!(
                "{push_url} is not a push URL (expected .../push/<endpoint>)"
            )));
        }
        let http = Client::builder()
            .timeout(Duration::from_secs(10))
            .build()
            .map_err(transport)?;
        Ok(HttpPusher {
            http,
            url: push_url.to_string(),
        })
    }
}

impl PushTarget for HttpPusher {
    fn push(&self, payload: &PushPayload) -> Result<Ack, PushError> {
        let resp = self
            .http
            .post(&self.url)
            .json(payload)
            .send()
            .map_err(|e| PushError::Transient(e.to_string()))?;
        let status = resp.status();
        match decode::<Ack>(resp) {
            Ok(ack) => Ok(ack),
            Err(e) if status == StatusCode::UNPROCESSABLE_ENTITY => {
                Err(PushError::Rejected(e.to_string()))
            }
            Err(e) if status == StatusCode::CONFLICT || status.is_server_error() => {
                Err(PushError::Transient(e.to_string()))
            }
            Err(e) => Err(PushError::Fatal(e.to_string())),
        }
    }
}

/// Labeler backend over HTTP, optionally restricted to one schema.
#[derive(Clone, Debug)]
pub struct HttpLabeling {
    pub client: ServiceClient,
    pub schema: Option<String>,
}

impl LabelingBackend for HttpLabeling {
    fn next_task(&self, labeler: &str) -> Result<Option<TaskView>> {
        self.client.next_task(labeler, self.schema.as_deref())
    }

    fn submit_vote(&self, task_id: &str, labeler: &str, category: &str) -> Result<VoteReceipt> {
        self.client.vote(task_id, labeler, category)
    }
}
