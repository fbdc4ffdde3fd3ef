use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use sembar::agent::{AgentReport, LlmClient};
use sembar::BoundingBox;

use crate::error::ServiceError;
use crate::store::{CorrectionRequest, JobRecord, Pipeline, Store, MAX_UPLOAD_BYTES};

/// Everything a handler needs. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub builtin: Arc<Pipeline>,
    /// Backend selected with `?backend=ext`, when configured.
    pub external: Option<Arc<Pipeline>>,
    pub llm: Arc<LlmClient>,
}

impl AppState {
    pub fn new(store: Store, llm: LlmClient) -> Self {
        Self { store: Arc::new(store), builtin: Arc::new(Pipeline::builtin()), external: None, llm: Arc::new(llm) }
    }

    pub fn with_external(mut self, pipeline: Pipeline) -> Self {
        self.external = Some(Arc::new(pipeline));
        self
    }
}

pub fn router(state: AppState) -> Router {
    // Room for multipart framing around a maximal image.
    let body_limit = MAX_UPLOAD_BYTES as usize + 64 * 1024;
    Router::new()
        .route("/api/health", get(health))
        .route("/api/images", post(upload).layer(DefaultBodyLimit::max(body_limit)))
        .route("/api/images/{id}", get(record))
        .route("/api/images/{id}/analyze", post(analyze))
        .route("/api/images/{id}/crop", get(crop))
        .route("/api/images/{id}/corrections", post(correct))
        .route("/api/images/{id}/agent", post(agent))
        .fallback(|method: Method, uri: Uri| async move { ServiceError::NoRoute(format!("{method} {}", uri.path())) })
        .with_state(state)
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ServiceError> + Send + 'static,
) -> Result<T, ServiceError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e.to_string())))?
}

fn body_error(status: StatusCode, message: String) -> ServiceError {
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ServiceError::TooLarge { limit: MAX_UPLOAD_BYTES }
    } else {
        ServiceError::InvalidRequest(message)
    }
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    body.map(|Json(v)| v).map_err(|e| ServiceError::InvalidRequest(e.body_text()))
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "version": env!("CARGO_PKG_VERSION")}))
}

/// Accepts the image as the raw body or as the first file of a multipart form.
async fn upload(State(state): State<AppState>, request: Request) -> Result<Json<serde_json::Value>, ServiceError> {
    let multipart = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let bytes = if multipart {
        let mut form = Multipart::from_request(request, &())
            .await
            .map_err(|e| ServiceError::InvalidRequest(e.body_text()))?;
        let field = form
            .next_field()
            .await
            .map_err(|e| body_error(e.status(), e.body_text()))?
            .ok_or_else(|| ServiceError::InvalidRequest("multipart form has no parts".into()))?;
        field.bytes().await.map_err(|e| body_error(e.status(), e.body_text()))?
    } else {
        Bytes::from_request(request, &()).await.map_err(|e| body_error(e.status(), e.body_text()))?
    };
    let store = state.store.clone();
    let id = blocking(move || store.upload(&bytes)).await?;
    Ok(Json(json!({"image_id": id})))
}

async fn record(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobRecord>, ServiceError> {
    let store = state.store.clone();
    Ok(Json(blocking(move || store.get(&id)).await?))
}

#[derive(Debug, Deserialize)]
struct AnalyzeParams {
    backend: Option<String>,
}

async fn analyze(
    State(state): State<AppState>,
    Path(id): Path<String>,
    params: Result<Query<AnalyzeParams>, QueryRejection>,
) -> Result<Json<JobRecord>, ServiceError> {
    let Query(params) = params.map_err(|e| ServiceError::InvalidRequest(e.body_text()))?;
    let pipeline = match params.backend.as_deref().unwrap_or("builtin") {
        "builtin" => state.builtin.clone(),
        "ext" => state.external.clone().ok_or_else(|| ServiceError::AdapterUnavailable("ext".into()))?,
        other => return Err(ServiceError::InvalidRequest(format!("unknown backend {other:?}; use builtin or ext"))),
    };
    let store = state.store.clone();
    Ok(Json(blocking(move || store.analyze(&id, &pipeline)).await?))
}

#[derive(Debug, Deserialize)]
struct CropParams {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
}

async fn crop(
    State(state): State<AppState>,
    Path(id): Path<String>,
    params: Result<Query<CropParams>, QueryRejection>,
) -> Result<Response, ServiceError> {
    let Query(p) = params.map_err(|e| ServiceError::InvalidRequest(e.body_text()))?;
    let region = BoundingBox::new(p.x0, p.y0, p.x1, p.y1).map_err(|e| ServiceError::InvalidRequest(e.to_string()))?;
    let store = state.store.clone();
    let png = blocking(move || store.crop(&id, region)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn correct(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<CorrectionRequest>, JsonRejection>,
) -> Result<Json<JobRecord>, ServiceError> {
    let request = json_body(body)?;
    let store = state.store.clone();
    Ok(Json(blocking(move || store.submit_correction(&id, &request)).await?))
}

#[derive(Debug, Deserialize)]
struct AgentRequest {
    question: Option<String>,
}

async fn agent(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<AgentRequest>, JsonRejection>,
) -> Result<Json<AgentReport>, ServiceError> {
    let request = json_body(body)?;
    let question = request.question.filter(|q| !q.trim().is_empty());
    let (store, llm) = (state.store.clone(), state.llm.clone());
    Ok(Json(blocking(move || store.agent_query(&id, question.as_deref(), &llm)).await?))
}
