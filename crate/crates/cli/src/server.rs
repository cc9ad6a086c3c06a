//! HTTP/JSON front of the engine.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use smstriage_core::engine::DEFAULT_PAGE_SIZE;
use smstriage_core::export::{ExportFormat, ExportOptions};
use smstriage_core::gateway::PushPayload;
use smstriage_core::learn::SchemaSpec;
use smstriage_core::{Engine, Error};

/// JSON error body: `{"error": {"code": ..., "message": ...}}`.
#[derive(Debug)]
pub struct ApiError(pub Error);

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}

#[derive(Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::NotFound { .. } => StatusCode::NOT_FOUND,
        Error::NameConflict(_)
        | Error::Paused(_)
        | Error::TaskClosed(_)
        | Error::DuplicateVote { .. } => StatusCode::CONFLICT,
        Error::Validation(_)
        | Error::Rejected(_)
        | Error::CannotTrain(_)
        | Error::InsufficientData(_)
        | Error::StaleVector { .. }
        | Error::UndefinedAuc
        | Error::EmptyLabelSet => StatusCode::UNPROCESSABLE_ENTITY,
        Error::Remote { status, .. } => {
            StatusCode::from_u16(*status).unwrap_or(StatusCode::BAD_GATEWAY)
        }
        Error::Corrupt(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => {
            StatusCode::INTERNAL_SERVER_ERROR
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = status_for(&self.0);
        if status.is_server_error() {
            tracing::error!(error = %self.0, "request failed");
        }
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.0.code().to_string(),
                message: self.0.to_string(),
            },
        };
        (status, Json(body)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError(Error::Validation(r.body_text()))
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs an engine call off the async runtime; engine calls take locks and
/// touch disk.
async fn run<T, F>(engine: &Arc<Engine>, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> smstriage_core::Result<T> + Send + 'static,
{
    let engine = Arc::clone(engine);
    tokio::task::spawn_blocking(move || f(&engine))
        .await
        .map_err(|e| ApiError(Error::Io(std::io::Error::other(e))))?
        .map_err(ApiError)
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route(
            "/collections",
            post(create_collection).get(list_collections),
        )
        .route("/collections/{id}", get(get_collection))
        .route("/collections/{id}/pause", post(pause))
        .route("/collections/{id}/resume", post(resume))
        .route("/collections/{id}/classifiers", get(list_classifiers))
        .route("/push/{endpoint}", post(push))
        .route("/classifiers", post(create_classifier))
        .route("/classifiers/{id}", get(get_classifier))
        .route("/classifiers/{id}/metrics", get(metrics))
        .route("/tasks/next", get(next_task))
        .route("/tasks/{id}/vote", post(vote))
        .route("/labels", get(list_labels))
        .route("/labels/{message_id}", delete(delete_label))
        .route("/export/{collection}/{schema}/{category}", get(export))
        .route("/stats/{collection}/{schema}", get(stats))
        .with_state(engine)
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct NewCollection {
    name: String,
    char_limit: Option<usize>,
}

async fn create_collection(
    State(engine): State<Arc<Engine>>,
    body: Result<Json<NewCollection>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let c = run(&engine, move |e| {
        e.create_collection(&req.name, req.char_limit)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(c)))
}

async fn list_collections(State(engine): State<Arc<Engine>>) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&engine, |e| Ok(e.collections())).await?))
}

async fn get_collection(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&engine, move |e| e.collection(&id)).await?))
}

async fn pause(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&engine, move |e| e.pause(&id)).await?))
}

async fn resume(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&engine, move |e| e.resume(&id)).await?))
}

async fn list_classifiers(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&engine, move |e| e.schemas_of(&id)).await?))
}

async fn push(
    State(engine): State<Arc<Engine>>,
    Path(endpoint): Path<String>,
    body: Result<Json<PushPayload>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(payload) = body?;
    let ack = run(&engine, move |e| e.ingest(&endpoint, payload)).await?;
    Ok((StatusCode::ACCEPTED, Json(ack)))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct NewClassifier {
    collection_id: String,
    #[serde(flatten)]
    spec: SchemaSpec,
}

async fn create_classifier(
    State(engine): State<Arc<Engine>>,
    body: Result<Json<NewClassifier>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    let s = run(&engine, move |e| {
        e.create_schema(&req.collection_id, req.spec)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(s)))
}

async fn get_classifier(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&engine, move |e| e.schema(&id)).await?))
}

async fn metrics(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(run(&engine, move |e| e.metrics(&id)).await?))
}

#[derive(Deserialize)]
struct NextQuery {
    labeler: String,
    schema: Option<String>,
}

async fn next_task(
    State(engine): State<Arc<Engine>>,
    Query(q): Query<NextQuery>,
) -> ApiResult<Response> {
    let task = run(&engine, move |e| {
        e.next_task(&q.labeler, q.schema.as_deref())
    })
    .await?;
    Ok(match task {
        Some(t) => Json(t).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

#[derive(Serialize, Deserialize)]
pub struct VoteRequest {
    pub labeler: String,
    pub category: String,
}

async fn vote(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
    body: Result<Json<VoteRequest>, JsonRejection>,
) -> ApiResult<impl IntoResponse> {
    let Json(req) = body?;
    Ok(Json(
        run(&engine, move |e| {
            e.submit_vote(&id, &req.labeler, &req.category)
        })
        .await?,
    ))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct LabelsQuery {
    schema: String,
    page: Option<usize>,
    page_size: Option<usize>,
}

async fn list_labels(
    State(engine): State<Arc<Engine>>,
    Query(q): Query<LabelsQuery>,
) -> ApiResult<impl IntoResponse> {
    let page = q.page.unwrap_or(1);
    let size = q.page_size.unwrap_or(DEFAULT_PAGE_SIZE);
    Ok(Json(
        run(&engine, move |e| e.list_labeled(&q.schema, page, size)).await?,
    ))
}

#[derive(Deserialize)]
struct SchemaQuery {
    schema: String,
}

async fn delete_label(
    State(engine): State<Arc<Engine>>,
    Path(message_id): Path<String>,
    Query(q): Query<SchemaQuery>,
) -> ApiResult<impl IntoResponse> {
    run(&engine, move |e| e.delete_label(&q.schema, &message_id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct ExportQuery {
    format: Option<String>,
    /// Adds the sender reference to each row; off by default for privacy.
    #[serde(default)]
    include_sender: bool,
}

async fn export(
    State(engine): State<Arc<Engine>>,
    Path((collection, schema, category)): Path<(String, String, String)>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let format: ExportFormat = q.format.as_deref().unwrap_or("csv").parse()?;
    let options = ExportOptions {
        format,
        include_sender: q.include_sender,
    };
    let body = run(&engine, move |e| {
        let mut buf = Vec::new();
        e.export_category(&collection, &schema, &category, options, &mut buf)?;
        Ok(buf)
    })
    .await?;
    let content_type = match format {
        ExportFormat::Csv => "text/csv; charset=utf-8",
        ExportFormat::Jsonl => "application/x-ndjson",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

async fn stats(
    State(engine): State<Arc<Engine>>,
    Path((collection, schema)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(
        run(&engine, move |e| e.stats(&collection, &schema)).await?,
    ))
}
