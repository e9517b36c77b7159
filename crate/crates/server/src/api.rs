use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::routing::{get, post};
use axum::{Json, Router};
use flipfeed_core::dataset::{ExportManifest, DEFAULT_MAX_WORDS, DEFAULT_MIN_WORDS};
use flipfeed_core::domain::{AggregateRow, PrefeedbackSubmission, RubricAnnotation, RubricLabels, Source, Strategy};
use flipfeed_core::pack::ValidatedPack;
use flipfeed_core::rubric::{GroupBy, MultiAttributeAgreement};
use flipfeed_core::store::Store;
use flipfeed_core::taskflow::{PrefeedbackOutcome, TaskFlow, TaskFlowError, TaskView};
use flipfeed_genai::{batch_generate, BatchOptions, CellStatus, EndpointsFile, GenAiClient, RunManifest};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::auth::Auth;
use crate::error::ApiError;
use crate::ops::{self, OpsError, QueueItem};

pub const DEFAULT_SAMPLE_PER_PROBLEM: usize = 100;

#[derive(Clone)]
pub struct AppState {
    pub flow: Arc<TaskFlow>,
    pub pack: Arc<ValidatedPack>,
    pub auth: Auth,
    pub genai: GenAiClient,
    pub endpoints_path: Option<PathBuf>,
    pub export_dir: PathBuf,
}

impl AppState {
    fn store(&self) -> &Arc<Store> {
        self.flow.store()
    }
}

impl From<OpsError> for ApiError {
    fn from(e: OpsError) -> Self {
        let message = e.to_string();
        match e {
            OpsError::NotFound(_) => ApiError::not_found(message),
            OpsError::Conflict(_) => ApiError::new(StatusCode::CONFLICT, "conflict", message),
            OpsError::Invalid(_) => ApiError::bad_request(message),
            OpsError::Kappa(_) => ApiError::new(StatusCode::CONFLICT, "agreement_unavailable", message),
            OpsError::Store(_) | OpsError::Dataset(_) | OpsError::Aggregate(_) => ApiError::internal(message),
        }
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn blocking<T, E, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, E> + Send + 'static,
    T: Send + 'static,
    E: Into<ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map_err(Into::into)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub pack_id: String,
    pub pack_digest: String,
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok".into(), pack_id: state.pack.id.to_string(), pack_digest: state.pack.digest.clone() })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct StartRequest {
    student_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StartResponse {
    pub session_id: String,
    pub token: String,
    pub task: Option<TaskView>,
}

async fn start_session(
    State(state): State<AppState>,
    payload: Result<Json<StartRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<StartResponse>), ApiError> {
    let req = body(payload)?;
    let flow = state.flow.clone();
    let pack_id = state.pack.id.to_string();
    let (session, task) = blocking(move || -> Result<_, TaskFlowError> {
        let session = flow.start_session(&req.student_id, &pack_id)?;
        let task = flow.next_task(&session.id)?;
        Ok((session, task))
    })
    .await?;
    let token = state.auth.student_token(&session.id);
    Ok((StatusCode::CREATED, Json(StartResponse { session_id: session.id, token, task })))
}

async fn current_task(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Json<TaskView>, ApiError> {
    state.auth.require_session(&headers, &id)?;
    let flow = state.flow.clone();
    Ok(Json(blocking(move || flow.get_current_task(&id)).await?))
}

async fn prefeedback(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    payload: Result<Json<PrefeedbackSubmission>, JsonRejection>,
) -> Result<Json<PrefeedbackOutcome>, ApiError> {
    state.auth.require_session(&headers, &id)?;
    let submission = body(payload)?;
    let flow = state.flow.clone();
    Ok(Json(blocking(move || flow.submit_prefeedback(&id, &submission)).await?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackRequest {
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub feedback_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_task: Option<TaskView>,
}

async fn feedback(
    State(state): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    payload: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<Json<FeedbackResponse>, ApiError> {
    state.auth.require_session(&headers, &id)?;
    let req = body(payload)?;
    let flow = state.flow.clone();
    let (instance, next) = blocking(move || -> Result<_, TaskFlowError> {
        let instance = flow.submit_feedback(&id, &req.text)?;
        Ok((instance, flow.next_task(&id)?))
    })
    .await?;
    Ok(Json(FeedbackResponse { feedback_id: instance.id, next_task: next }))
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    annotator: String,
    n_per_problem: Option<usize>,
    source: Option<Source>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueueResponse {
    pub annotator: String,
    pub items: Vec<QueueItem>,
}

async fn annotation_queue(
    State(state): State<AppState>,
    headers: HeaderMap,
    params: Result<Query<QueueParams>, QueryRejection>,
) -> Result<Json<QueueResponse>, ApiError> {
    state.auth.require_staff(&headers)?;
    let p = query(params)?;
    let store = state.store().clone();
    let annotator = p.annotator.clone();
    let items = blocking(move || {
        ops::annotation_queue(
            &store,
            &annotator,
            p.n_per_problem.unwrap_or(DEFAULT_SAMPLE_PER_PROBLEM),
            p.source.unwrap_or(Source::Student),
        )
    })
    .await?;
    Ok(Json(QueueResponse { annotator: p.annotator, items }))
}

#[derive(Debug, Deserialize)]
struct AnnotationRequest {
    annotator_id: String,
    #[serde(flatten)]
    labels: RubricLabels,
    #[serde(default)]
    overwrite: bool,
}

async fn annotate(
    State(state): State<AppState>,
    Path(feedback_id): Path<String>,
    headers: HeaderMap,
    payload: Result<Json<AnnotationRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<RubricAnnotation>), ApiError> {
    state.auth.require_staff(&headers)?;
    let req = body(payload)?;
    let store = state.store().clone();
    let a = blocking(move || {
        ops::record_annotation(&store, &feedback_id, &req.annotator_id, req.labels, req.overwrite)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(a)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportRequest {
    #[serde(default = "default_min")]
    min_words: usize,
    #[serde(default = "default_max")]
    max_words: usize,
    #[serde(default)]
    validation_fraction: Option<f64>,
}

fn default_min() -> usize {
    DEFAULT_MIN_WORDS
}
fn default_max() -> usize {
    DEFAULT_MAX_WORDS
}

async fn export_finetune(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Result<Json<ExportRequest>, JsonRejection>,
) -> Result<Json<ExportManifest>, ApiError> {
    state.auth.require_staff(&headers)?;
    let req = body(payload)?;
    let store = state.store().clone();
    let out = state.export_dir.join("finetune.jsonl");
    let manifest = blocking(move || {
        std::fs::create_dir_all(out.parent().expect("joined path has a parent"))
            .map_err(|e| OpsError::Invalid(format!("cannot create export directory: {e}")))?;
        ops::export_finetune(&store, req.min_words, req.max_words, &out, req.validation_fraction)
    })
    .await?;
    Ok(Json(manifest))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateRequest {
    /// Endpoint names from the config file; all of them when absent.
    #[serde(default)]
    endpoints: Option<Vec<String>>,
    strategies: Vec<Strategy>,
    #[serde(default)]
    dry_run: bool,
    #[serde(default)]
    skip_existing: bool,
    #[serde(default)]
    concurrency: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub counts: std::collections::BTreeMap<CellStatus, usize>,
    pub cells: Vec<flipfeed_genai::CellRecord>,
}

async fn generate(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Result<Json<GenerateRequest>, JsonRejection>,
) -> Result<Json<GenerateResponse>, ApiError> {
    state.auth.require_staff(&headers)?;
    let req = body(payload)?;
    let path = state
        .endpoints_path
        .clone()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no_endpoints", "the server has no endpoint config"))?;
    let file = EndpointsFile::load(&path).map_err(|e| ApiError::internal(e.to_string()))?;
    let endpoints = match &req.endpoints {
        None => file.endpoints,
        Some(names) => {
            let unknown: Vec<&String> =
                names.iter().filter(|n| !file.endpoints.iter().any(|e| &&e.name == n)).collect();
            if !unknown.is_empty() {
                return Err(ApiError::bad_request("unknown endpoints").with_details(json!({ "unknown": unknown })));
            }
            file.endpoints.into_iter().filter(|e| names.contains(&e.name)).collect()
        }
    };
    if req.strategies.is_empty() {
        return Err(ApiError::bad_request("strategies must not be empty"));
    }
    let options = BatchOptions {
        concurrency: req.concurrency.unwrap_or(4),
        dry_run: req.dry_run,
        skip_existing: req.skip_existing,
    };
    let manifest: RunManifest =
        batch_generate(&state.genai, &endpoints, &req.strategies, &state.pack, state.store(), &options).await;
    Ok(Json(GenerateResponse { counts: manifest.counts(), cells: manifest.cells }))
}

#[derive(Debug, Deserialize)]
struct SummaryParams {
    group_by: Option<String>,
}

async fn summary(
    State(state): State<AppState>,
    headers: HeaderMap,
    params: Result<Query<SummaryParams>, QueryRejection>,
) -> Result<Json<Vec<AggregateRow>>, ApiError> {
    state.auth.require_staff(&headers)?;
    let p = query(params)?;
    let group_by: GroupBy = p.group_by.as_deref().unwrap_or("problem").parse().map_err(ApiError::bad_request)?;
    let store = state.store().clone();
    Ok(Json(blocking(move || ops::summary(&store, group_by)).await?))
}

#[derive(Debug, Deserialize)]
struct AgreementParams {
    annotator_a: String,
    annotator_b: String,
}

async fn agreement(
    State(state): State<AppState>,
    headers: HeaderMap,
    params: Result<Query<AgreementParams>, QueryRejection>,
) -> Result<Json<MultiAttributeAgreement>, ApiError> {
    state.auth.require_staff(&headers)?;
    let p = query(params)?;
    let store = state.store().clone();
    Ok(Json(blocking(move || ops::agreement(&store, &p.annotator_a, &p.annotator_b)).await?))
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/sessions", post(start_session))
        .route("/v1/sessions/{id}/task", get(current_task))
        .route("/v1/sessions/{id}/prefeedback", post(prefeedback))
        .route("/v1/sessions/{id}/feedback", post(feedback))
        .route("/v1/annotation/queue", get(annotation_queue))
        .route("/v1/annotation/{feedback_id}", post(annotate))
        .route("/v1/exports/finetune", post(export_finetune))
        .route("/v1/generate", post(generate))
        .route("/v1/reports/summary", get(summary))
        .route("/v1/reports/agreement", get(agreement))
        .fallback(fallback)
        .with_state(state)
}
