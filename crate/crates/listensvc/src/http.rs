//! JSON-over-HTTP front end.
//!
//! Errors are `{"error": {"code": ..., "message": ...}}`. Request bodies are
//! parsed here rather than by the `Json` extractor so malformed input also
//! gets a machine-readable code.

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde_json::json;
use tower_http::services::ServeDir;

use crate::error::StudyError;
use crate::service::{CreateStudy, RegisterListener, StudyService, SubmitResponse};

impl StudyError {
    pub fn status(&self) -> StatusCode {
        match self {
            StudyError::UnknownStudy(_)
            | StudyError::UnknownListener(_)
            | StudyError::UnknownScreen(_)
            | StudyError::UnknownStimulus(_)
            | StudyError::UnknownRoute(_) => StatusCode::NOT_FOUND,
            StudyError::DuplicateStudy(_)
            | StudyError::DuplicateListener(_)
            | StudyError::StudyClosed(_)
            | StudyError::WrongScreen { .. }
            | StudyError::AlreadyAnswered(_)
            | StudyError::AssignmentComplete
            | StudyError::InsufficientScreens { .. } => StatusCode::CONFLICT,
            StudyError::InvalidConfig(_)
            | StudyError::InvalidScreen { .. }
            | StudyError::DuplicateScreen(_)
            | StudyError::KindMismatch { .. }
            | StudyError::OutOfRange(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StudyError::BadRequest(_) => StatusCode::BAD_REQUEST,
            StudyError::Journal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for StudyError {
    fn into_response(self) -> Response {
        if matches!(self, StudyError::Journal(_)) {
            log::error!("{self}");
        }
        let body = json!({"error": {"code": self.code(), "message": self.to_string()}});
        (self.status(), Json(body)).into_response()
    }
}

type Shared = Arc<StudyService>;
type ApiResult = Result<Response, StudyError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, StudyError> {
    if body.is_empty() {
        return serde_json::from_slice(b"{}").map_err(|e| StudyError::BadRequest(e.to_string()));
    }
    serde_json::from_slice(body).map_err(|e| StudyError::BadRequest(e.to_string()))
}

/// Runs a journal write off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, StudyError> + Send + 'static,
) -> Result<T, StudyError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| StudyError::Journal(format!("writer task failed: {e}")))?
}

async fn create_study(State(svc): State<Shared>, body: Bytes) -> ApiResult {
    let req: CreateStudy = parse(&body)?;
    let id = blocking(move || svc.create_study(req)).await?;
    Ok((StatusCode::CREATED, Json(json!({"study_id": id}))).into_response())
}

async fn register(State(svc): State<Shared>, Path(study): Path<String>, body: Bytes) -> ApiResult {
    let req: RegisterListener = parse(&body)?;
    let a = blocking(move || svc.register_listener(&study, req)).await?;
    Ok((StatusCode::CREATED, Json(a)).into_response())
}

async fn next(State(svc): State<Shared>, Path((study, listener)): Path<(String, String)>) -> ApiResult {
    Ok(Json(svc.next_screen(&study, &listener)?).into_response())
}

async fn respond(State(svc): State<Shared>, Path(study): Path<String>, body: Bytes) -> ApiResult {
    let req: SubmitResponse = parse(&body)?;
    let ack = blocking(move || svc.submit(&study, req)).await?;
    Ok(Json(ack).into_response())
}

async fn export(State(svc): State<Shared>, Path(study): Path<String>) -> ApiResult {
    Ok(Json(svc.export(&study)?).into_response())
}

async fn stats(State(svc): State<Shared>, Path(study): Path<String>) -> ApiResult {
    Ok(Json(svc.stats(&study)?).into_response())
}

async fn close(State(svc): State<Shared>, Path(study): Path<String>) -> ApiResult {
    blocking(move || svc.close_study(&study)).await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn list(State(svc): State<Shared>) -> ApiResult {
    Ok(Json(json!({"studies": svc.study_ids()})).into_response())
}

/// Parses a single `bytes=` range against a body of `len` bytes.
/// `Ok(None)` means serve the whole body; `Err(())` is unsatisfiable.
pub fn parse_range(header: &str, len: u64) -> Result<Option<(u64, u64)>, ()> {
    let Some(spec) = header.trim().strip_prefix("bytes=") else {
        return Ok(None);
    };
    if spec.contains(',') {
        // multipart ranges are not supported; full body is a valid reply
        return Ok(None);
    }
    let (start, end) = spec.split_once('-').ok_or(())?;
    let (start, end) = (start.trim(), end.trim());
    let range = if start.is_empty() {
        let n: u64 = end.parse().map_err(|_| ())?;
        if n == 0 || len == 0 {
            return Err(());
        }
        (len.saturating_sub(n), len - 1)
    } else {
        let s: u64 = start.parse().map_err(|_| ())?;
        let e: u64 = if end.is_empty() {
            len.saturating_sub(1)
        } else {
            end.parse::<u64>().map_err(|_| ())?.min(len.saturating_sub(1))
        };
        if s >= len || e < s {
            return Err(());
        }
        (s, e)
    };
    Ok(Some(range))
}

async fn audio(State(svc): State<Shared>, Path(token): Path<String>, headers: HeaderMap) -> ApiResult {
    let path: PathBuf = svc.stimulus_path(&token)?;
    let bytes = tokio::fs::read(&path).await.map_err(|e| {
        log::warn!("{}: {e}", path.display());
        StudyError::UnknownStimulus(token.clone())
    })?;
    let len = bytes.len() as u64;
    let range = headers
        .get(header::RANGE)
        .and_then(|v| v.to_str().ok())
        .map(|h| parse_range(h, len))
        .unwrap_or(Ok(None));
    let mut resp = match range {
        Ok(None) => (StatusCode::OK, Body::from(bytes)).into_response(),
        Ok(Some((s, e))) => {
            let mut r = (StatusCode::PARTIAL_CONTENT, Body::from(bytes[s as usize..=e as usize].to_vec())).into_response();
            r.headers_mut().insert(
                header::CONTENT_RANGE,
                HeaderValue::from_str(&format!("bytes {s}-{e}/{len}")).expect("ascii"),
            );
            r
        }
        Err(()) => {
            let mut r = StatusCode::RANGE_NOT_SATISFIABLE.into_response();
            r.headers_mut().insert(
                header::CONTENT_RANGE,
                HeaderValue::from_str(&format!("bytes */{len}")).expect("ascii"),
            );
            return Ok(r);
        }
    };
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("audio/wav"));
    h.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
    h.insert(header::CACHE_CONTROL, HeaderValue::from_static("no-store"));
    Ok(resp)
}

async fn not_found(uri: axum::http::Uri) -> StudyError {
    StudyError::UnknownRoute(uri.path().to_string())
}

/// Builds the API router; `static_dir` is served at `/` when given.
pub fn router(svc: Arc<StudyService>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/studies", post(create_study).get(list))
        .route("/studies/{id}/listeners", post(register))
        .route("/studies/{id}/listeners/{lid}/next", get(next))
        .route("/studies/{id}/responses", post(respond))
        .route("/studies/{id}/export", get(export))
        .route("/studies/{id}/stats", get(stats))
        .route("/studies/{id}/close", post(close))
        .route("/audio/{stimulus_id}", get(audio))
        .with_state(svc);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}
