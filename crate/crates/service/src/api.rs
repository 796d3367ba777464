//! HTTP control and observation plane. Field names are documented in
//! `docs/api.md`.

use std::convert::Infallible;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use crate::ingest::{CameraConfig, CameraPatch};
use crate::pipeline::{Service, ServiceError};
use crate::store::{LatestFrame, LogRecord, Payload};

pub const MAX_UPLOAD_BYTES: usize = 20 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    code: &'a str,
    message: &'a str,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            error: ErrorDetail {
                code: self.code,
                message: &self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let msg = e.to_string();
        match e {
            ServiceError::NotFound(_) => Self::not_found(msg),
            ServiceError::Conflict(_) => Self::new(StatusCode::CONFLICT, "conflict", msg),
            ServiceError::Validation(_) => Self::validation(msg),
            ServiceError::InvalidState(_) => Self::new(StatusCode::CONFLICT, "invalid_state", msg),
            ServiceError::Backend(_) => Self::new(StatusCode::BAD_GATEWAY, "backend_error", msg),
            ServiceError::Store(_) => {
                tracing::error!("store failure: {msg}");
                Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg)
            }
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// JSON body parse whose errors name the offending field.
fn parse_json<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path == "." {
            ApiError::validation(format!("body: {inner}"))
        } else {
            ApiError::validation(format!("{path}: {inner}"))
        }
    })
}

#[derive(Clone)]
struct AppState {
    svc: Arc<Service>,
    token: Option<Arc<str>>,
}

pub fn router(svc: Arc<Service>) -> Router {
    let token = svc.config().server.auth_token.clone().map(Arc::from);
    let state = AppState { svc, token };
    let api = Router::new()
        .route("/api/cameras", get(list_cameras).post(create_camera))
        .route("/api/cameras/{id}", get(get_camera).patch(patch_camera))
        .route("/api/cameras/{id}/latest", get(latest))
        .route("/api/alerts", get(list_alerts))
        .route("/api/alerts/{id}/ack", post(ack_alert))
        .route(
            "/api/detect",
            post(detect).layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES)),
        )
        .route("/api/events/stream", get(events))
        .route("/api/metrics", get(metrics))
        .route("/frames/{file}", get(frame))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    api.route("/healthz", get(|| async { "ok" })).with_state(state)
}

async fn require_token(State(st): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = &st.token else {
        return next.run(req).await;
    };
    let header_ok = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|v| v == token.as_ref());
    // EventSource cannot set headers, so the stream also accepts a query token
    let query_ok = req.uri().query().is_some_and(|q| {
        q.split('&')
            .any(|kv| kv.strip_prefix("access_token=") == Some(token.as_ref()))
    });
    if header_ok || query_ok {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
            .into_response()
    }
}

async fn list_cameras(State(st): State<AppState>) -> impl IntoResponse {
    Json(st.svc.cameras())
}

async fn get_camera(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(st.svc.camera(&id)?).into_response())
}

async fn create_camera(State(st): State<AppState>, body: Bytes) -> ApiResult<Response> {
    let cam: CameraConfig = parse_json(&body)?;
    let view = st.svc.add_camera(cam)?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn patch_camera(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let patch: CameraPatch = parse_json(&body)?;
    Ok(Json(st.svc.patch_camera(&id, &patch)?).into_response())
}

#[derive(Serialize)]
struct LatestView {
    #[serde(flatten)]
    latest: LatestFrame,
    image_url: String,
}

async fn latest(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(match st.svc.latest(&id)? {
        None => StatusCode::NO_CONTENT.into_response(),
        Some(latest) => {
            let image_url = format!("/frames/{id}.jpg");
            Json(LatestView { latest, image_url }).into_response()
        }
    })
}

async fn frame(State(st): State<AppState>, Path(file): Path<String>) -> ApiResult<Response> {
    let id = file
        .strip_suffix(".jpg")
        .filter(|id| !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_'))
        .ok_or_else(|| ApiError::not_found(format!("no frame {file}")))?;
    match tokio::fs::read(st.svc.frame_path(id)).await {
        Ok(bytes) => Ok((
            [
                (header::CONTENT_TYPE, "image/jpeg"),
                (header::CACHE_CONTROL, "no-store"),
            ],
            bytes,
        )
            .into_response()),
        Err(_) => Err(ApiError::not_found(format!("no frame cached for camera {id}"))),
    }
}

#[derive(Deserialize)]
struct AlertQuery {
    state: Option<String>,
}

async fn list_alerts(State(st): State<AppState>, Query(q): Query<AlertQuery>) -> ApiResult<Response> {
    let active_only = match q.state.as_deref() {
        None | Some("active") => true,
        Some("all") => false,
        Some(other) => {
            return Err(ApiError::validation(format!(
                "state: expected active or all, got {other:?}"
            )))
        }
    };
    Ok(Json(st.svc.alerts(active_only)).into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AckBody {
    #[serde(default)]
    operator: Option<String>,
}

async fn ack_alert(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Response> {
    let body: AckBody = if body.is_empty() {
        AckBody::default()
    } else {
        parse_json(&body)?
    };
    Ok(Json(st.svc.acknowledge(&id, body.operator)?).into_response())
}

#[derive(Deserialize)]
struct DetectQuery {
    image_id: Option<String>,
}

async fn detect(
    State(st): State<AppState>,
    Query(q): Query<DetectQuery>,
    body: Result<Bytes, BytesRejection>,
) -> ApiResult<Response> {
    let body = body.map_err(|e| {
        if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
            ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                "payload_too_large",
                format!("upload exceeds {MAX_UPLOAD_BYTES} bytes"),
            )
        } else {
            ApiError::validation(e.body_text())
        }
    })?;
    if body.is_empty() {
        return Err(ApiError::validation("body: expected a JPEG or PNG image"));
    }
    let image_id = q.image_id.unwrap_or_else(|| "upload".to_string());
    Ok(Json(st.svc.detect_bytes(&image_id, &body).await?).into_response())
}

#[derive(Deserialize)]
struct StreamQuery {
    since: Option<u64>,
}

fn streamed(rec: &LogRecord) -> bool {
    matches!(
        rec.payload,
        Payload::Detection(_) | Payload::Alert(_) | Payload::PollStatus(_)
    )
}

fn to_event(rec: &LogRecord) -> Event {
    Event::default()
        .id(rec.seq.to_string())
        .event(rec.kind())
        .json_data(rec)
        .expect("records are serializable")
}

/// Server-sent events. Resumes after `?since=<seq>` or the `Last-Event-ID`
/// header; without either, only new records are sent.
async fn events(
    State(st): State<AppState>,
    Query(q): Query<StreamQuery>,
    headers: HeaderMap,
) -> ApiResult<Sse<impl Stream<Item = Result<Event, Infallible>>>> {
    let resume = q.since.or_else(|| {
        headers
            .get("last-event-id")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse().ok())
    });
    let since = resume.unwrap_or_else(|| st.svc.last_seq());
    let (backlog, rx) = st.svc.subscribe(since)?;
    let cursor = backlog.last().map_or(since, |r| r.seq);
    let head = stream::iter(
        backlog
            .into_iter()
            .filter(streamed)
            .map(|r| Ok(to_event(&r)))
            .collect::<Vec<_>>(),
    );
    let tail = stream::unfold((rx, cursor), |(mut rx, mut cursor)| async move {
        loop {
            match rx.recv().await {
                Ok(rec) if rec.seq <= cursor => continue,
                Ok(rec) => {
                    cursor = rec.seq;
                    if streamed(&rec) {
                        return Some((Ok(to_event(&rec)), (rx, cursor)));
                    }
                }
                // a slow client ends its stream; it resumes from its last id
                Err(RecvError::Lagged(_)) | Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(head.chain(tail)).keep_alive(KeepAlive::default()))
}

async fn metrics(State(st): State<AppState>, headers: HeaderMap) -> Response {
    let snap = st.svc.metrics();
    let wants_json = headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("application/json"));
    if wants_json {
        Json(snap).into_response()
    } else {
        (
            [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
            snap.render_text(),
        )
            .into_response()
    }
}

/// Serves the API on `listener` until `shutdown` resolves.
pub async fn serve(
    svc: Arc<Service>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(svc))
        .with_graceful_shutdown(shutdown)
        .await
}
