//! Local HTTP facade over the decomposition: job submission, polling,
//! artifact download and a naming preview for seeding annotations.
//!
//! Routes:
//! - `POST /api/jobs` multipart with `image` (PNG), `annotation` (JSON) and
//!   optional `config` (solver JSON) and `transfer` (`srgb` or `linear`)
//! - `GET /api/jobs/{id}`
//! - `GET /api/jobs/{id}/artifacts/{kind}` for `reflectance`, `shading`,
//!   `names`, `trace`, `report`
//! - `POST /api/naming/preview` multipart with `image`

mod jobs;

use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use intrinsic_core::colorspace::LinearImage;
use intrinsic_core::naming::{auto_compose_image, ColorComposition, NamingModel};
use intrinsic_core::scenes::{decode_image, image_dimensions, Transfer};
use intrinsic_core::solver::SolverConfig;
use intrinsic_core::Error as CoreError;
use serde_json::json;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use jobs::{Job, JobProgress, JobQueue, JobStatus, JobView, Registry, TraceView, ARTIFACT_KINDS};

/// Largest accepted image, in pixels.
pub const MAX_PIXELS: usize = 4_000_000;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub workers: NonZeroUsize,
    /// Finished jobs kept before least-recently-used eviction.
    pub capacity: usize,
    pub max_pixels: usize,
    /// Request body limit in bytes.
    pub body_limit: usize,
    pub model: Arc<NamingModel>,
    /// Base solver settings; per-job `config` JSON replaces them.
    pub solver: SolverConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workers: NonZeroUsize::MIN,
            capacity: 50,
            max_pixels: MAX_PIXELS,
            body_limit: 128 << 20,
            model: Arc::new(NamingModel::default()),
            solver: SolverConfig::default(),
        }
    }
}

/// Shared handler state.
#[derive(Clone)]
pub struct AppState {
    queue: Arc<JobQueue>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        let queue = JobQueue::start(config.workers, config.capacity, Arc::clone(&config.model));
        Self {
            queue: Arc::new(queue),
            config: Arc::new(config),
        }
    }

    pub fn queue(&self) -> &JobQueue {
        &self.queue
    }
}

/// JSON error body: `{"error": ..., "field": ...}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    field: Option<String>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            field: None,
        }
    }

    fn field(status: StatusCode, field: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            field: Some(field.to_string()),
        }
    }

    fn unprocessable(field: &str, err: &CoreError) -> Self {
        match err {
            CoreError::InvalidAnnotation { field, reason } => {
                Self::field(StatusCode::UNPROCESSABLE_ENTITY, field, reason.clone())
            }
            other => Self::field(StatusCode::UNPROCESSABLE_ENTITY, field, other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": self.message, "field": self.field });
        (self.status, Json(body)).into_response()
    }
}

/// Uploaded form fields, all optional until validated.
#[derive(Default)]
struct Upload {
    image: Option<Vec<u8>>,
    annotation: Option<String>,
    config: Option<String>,
    transfer: Option<String>,
}

async fn read_upload(mut form: Multipart) -> Result<Upload, ApiError> {
    let mut up = Upload::default();
    while let Some(field) = form
        .next_field()
        .await
        .map_err(|e| ApiError::new(e.status(), e.body_text()))?
    {
        let name = field.name().unwrap_or_default().to_string();
        let bytes = field
            .bytes()
            .await
            .map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        let text = || {
            String::from_utf8(bytes.to_vec())
                .map_err(|_| ApiError::field(StatusCode::UNPROCESSABLE_ENTITY, &name, "field is not UTF-8"))
        };
        match name.as_str() {
            "image" => up.image = Some(bytes.to_vec()),
            "annotation" => up.annotation = Some(text()?),
            "config" => up.config = Some(text()?),
            "transfer" => up.transfer = Some(text()?),
            other => {
                return Err(ApiError::field(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    other,
                    "unknown form field",
                ))
            }
        }
    }
    Ok(up)
}

fn parse_transfer(raw: Option<&str>) -> Result<Transfer, ApiError> {
    match raw.map(str::trim) {
        None | Some("srgb") => Ok(Transfer::Srgb),
        Some("linear") => Ok(Transfer::Linear),
        Some(other) => Err(ApiError::field(
            StatusCode::UNPROCESSABLE_ENTITY,
            "transfer",
            format!("expected \"srgb\" or \"linear\", got {other:?}"),
        )),
    }
}

/// Size check from the header first, so oversized uploads are never decoded.
fn decode_upload(bytes: Option<&[u8]>, transfer: Transfer, max_pixels: usize) -> Result<LinearImage, ApiError> {
    let bytes = bytes.ok_or_else(|| ApiError::field(StatusCode::UNPROCESSABLE_ENTITY, "image", "missing image"))?;
    let (w, h) = image_dimensions(bytes).map_err(|e| ApiError::unprocessable("image", &e))?;
    if w.saturating_mul(h) > max_pixels {
        return Err(ApiError::field(
            StatusCode::PAYLOAD_TOO_LARGE,
            "image",
            format!("{w}x{h} exceeds {max_pixels} pixels"),
        ));
    }
    decode_image(bytes, transfer).map_err(|e| ApiError::unprocessable("image", &e))
}

async fn submit_job(State(state): State<AppState>, form: Multipart) -> Result<Response, ApiError> {
    let up = read_upload(form).await?;
    let annotation = up
        .annotation
        .as_deref()
        .ok_or_else(|| ApiError::field(StatusCode::UNPROCESSABLE_ENTITY, "annotation", "missing annotation"))
        .and_then(|s| ColorComposition::from_json_str(s).map_err(|e| ApiError::unprocessable("annotation", &e)))?;
    let config = match up.config.as_deref() {
        Some(s) if !s.trim().is_empty() => {
            SolverConfig::from_json_str(s).map_err(|e| ApiError::unprocessable("config", &e))?
        }
        _ => state.config.solver.clone(),
    };
    let transfer = parse_transfer(up.transfer.as_deref())?;
    let max = state.config.max_pixels;
    let image_bytes = up.image;
    let image = tokio::task::spawn_blocking(move || decode_upload(image_bytes.as_deref(), transfer, max))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let id = state.queue.submit(image, annotation, config);
    let body = json!({ "id": id, "status": JobStatus::Queued, "status_url": format!("/api/jobs/{id}") });
    Ok((StatusCode::ACCEPTED, Json(body)).into_response())
}

fn not_found(id: &str) -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, format!("unknown job {id}"))
}

async fn job_status(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    state
        .queue
        .with_job(&id, Job::view)
        .map(Json)
        .ok_or_else(|| not_found(&id))
}

async fn job_artifact(
    State(state): State<AppState>,
    Path((id, kind)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let Some(&(_, file, content_type)) = ARTIFACT_KINDS.iter().find(|(k, _, _)| *k == kind) else {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown artifact kind {kind}")));
    };
    let (status, artifacts) = state
        .queue
        .with_job(&id, |j| (j.status, j.artifacts.clone()))
        .ok_or_else(|| not_found(&id))?;
    let Some(artifacts) = artifacts else {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!("job {id} is {} and has no artifacts", json!(status).as_str().unwrap_or("")),
        ));
    };
    let bytes = artifacts.get(file).expect("known artifact").to_vec();
    Ok(([(header::CONTENT_TYPE, HeaderValue::from_static(content_type))], bytes).into_response())
}

async fn naming_preview(State(state): State<AppState>, form: Multipart) -> Result<Json<serde_json::Value>, ApiError> {
    let up = read_upload(form).await?;
    let transfer = parse_transfer(up.transfer.as_deref())?;
    let max = state.config.max_pixels;
    let model = Arc::clone(&state.config.model);
    let composition = tokio::task::spawn_blocking(move || {
        let image = decode_upload(up.image.as_deref(), transfer, max)?;
        auto_compose_image(&model, &image).map_err(|e| ApiError::unprocessable("image", &e))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(composition.to_json_value()))
}

fn is_local_origin(origin: &HeaderValue) -> bool {
    let Ok(s) = origin.to_str() else { return false };
    let Some(rest) = s.strip_prefix("http://").or_else(|| s.strip_prefix("https://")) else {
        return false;
    };
    let host = if let Some(v6) = rest.strip_prefix('[') {
        v6.split(']').next().map(|h| format!("[{h}]")).unwrap_or_default()
    } else {
        rest.split(':').next().unwrap_or_default().to_string()
    };
    matches!(host.as_str(), "localhost" | "127.0.0.1" | "[::1]")
}

/// CORS for browser clients served from localhost on any port.
pub fn cors_layer() -> CorsLayer {
    CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|origin, _| is_local_origin(origin)))
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE])
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.body_limit;
    Router::new()
        .route("/api/jobs", post(submit_job))
        .route("/api/jobs/{id}", get(job_status))
        .route("/api/jobs/{id}/artifacts/{kind}", get(job_artifact))
        .route("/api/naming/preview", post(naming_preview))
        .layer(DefaultBodyLimit::max(limit))
        .layer(cors_layer())
        .with_state(state)
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, config: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(config))).await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn local_origins() {
        for ok in ["http://localhost:5173", "http://127.0.0.1", "https://localhost", "http://[::1]:8080"] {
            assert!(is_local_origin(&HeaderValue::from_static(ok)), "{ok}");
        }
        for bad in ["http://example.com", "http://localhost.evil.com", "null", "file://localhost"] {
            assert!(!is_local_origin(&HeaderValue::from_static(bad)), "{bad}");
        }
    }
}
