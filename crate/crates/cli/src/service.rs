//! HTTP endpoints behind the review UI.
//!
//! | method | path                   | body / result                          |
//! |--------|------------------------|----------------------------------------|
//! | GET    | `/tasks`               | every clip with its current verdict    |
//! | GET    | `/audio/{filename}`    | WAV bytes, honours a single `Range`    |
//! | GET    | `/waveform/{filename}` | peak envelope for drawing              |
//! | POST   | `/verdict`             | one verdict; 404 unknown, 422 invalid  |
//! | POST   | `/commit`              | `{accept_all}`; the commit report      |

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use anyhow::Context;
use axum::body::Body;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use flyover_core::capture::read_wav;
use flyover_core::dataset::{Registry, DEFAULT_FOLDS, DEFAULT_SESSION_GAP_HOURS};
use flyover_core::review::{envelope, CommitOptions, CommitReport, ReviewError, ReviewStore, ReviewTask, Verdict, ENVELOPE_BINS_PER_S};

struct Inner {
    store: Mutex<ReviewStore>,
    registry: Option<Registry>,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn open(dir: &Path, registry: Option<Registry>) -> Result<Self, ReviewError> {
        Ok(AppState(Arc::new(Inner {
            store: Mutex::new(ReviewStore::open(dir)?),
            registry,
        })))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/tasks", get(tasks))
        .route("/audio/{filename}", get(audio))
        .route("/waveform/{filename}", get(waveform))
        .route("/verdict", post(verdict))
        .route("/commit", post(commit))
        .with_state(state)
}

pub async fn serve(dir: &Path, host: &str, port: u16, registry: Option<PathBuf>) -> anyhow::Result<()> {
    let registry = registry.as_deref().map(Registry::load).transpose()?;
    let state = AppState::open(dir, registry)?;
    let listener = tokio::net::TcpListener::bind((host, port)).await.with_context(|| format!("binding {host}:{port}"))?;
    eprintln!("review service on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let code = match e {
            ReviewError::UnknownFile(_) => StatusCode::NOT_FOUND,
            ReviewError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::CONFLICT,
        };
        ApiError(code, e.to_string())
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn lock(s: &Inner) -> std::sync::MutexGuard<'_, ReviewStore> {
    s.store.lock().unwrap_or_else(|p| p.into_inner())
}

async fn tasks(State(s): State<AppState>) -> Json<Vec<ReviewTask>> {
    Json(lock(&s.0).tasks())
}

/// Parses a single `bytes=` range against a body of `len` bytes.
/// `Ok(None)` means serve the whole body; `Err(())` means unsatisfiable.
pub fn parse_range(value: &str, len: u64) -> Result<Option<(u64, u64)>, ()> {
    let Some(spec) = value.trim().strip_prefix("bytes=") else {
        return Ok(None);
    };
    if spec.contains(',') {
        return Ok(None);
    }
    let Some((a, b)) = spec.split_once('-') else {
        return Ok(None);
    };
    let (a, b) = (a.trim(), b.trim());
    let range = match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ok(None),
        (true, false) => {
            let Ok(n) = b.parse::<u64>() else { return Ok(None) };
            if n == 0 || len == 0 {
                return Err(());
            }
            (len.saturating_sub(n), len - 1)
        }
        (false, _) => {
            let Ok(start) = a.parse::<u64>() else { return Ok(None) };
            let end = if b.is_empty() {
                len.saturating_sub(1)
            } else {
                let Ok(end) = b.parse::<u64>() else { return Ok(None) };
                if end < start {
                    return Ok(None);
                }
                end.min(len.saturating_sub(1))
            };
            if start >= len {
                return Err(());
            }
            (start, end)
        }
    };
    Ok(Some(range))
}

async fn audio(State(s): State<AppState>, UrlPath(filename): UrlPath<String>, headers: HeaderMap) -> Result<Response, ApiError> {
    let path = lock(&s.0).audio_path(&filename)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError(StatusCode::NOT_FOUND, format!("{filename}: {e}")))?;
    let len = bytes.len() as u64;
    let range = headers.get(header::RANGE).and_then(|v| v.to_str().ok()).map(|v| parse_range(v, len));
    let mut resp = match range {
        Some(Err(())) => {
            let mut r = StatusCode::RANGE_NOT_SATISFIABLE.into_response();
            r.headers_mut()
                .insert(header::CONTENT_RANGE, HeaderValue::from_str(&format!("bytes */{len}")).expect("ascii"));
            r
        }
        Some(Ok(Some((a, b)))) => {
            let mut r = Response::new(Body::from(bytes[a as usize..=b as usize].to_vec()));
            *r.status_mut() = StatusCode::PARTIAL_CONTENT;
            r.headers_mut()
                .insert(header::CONTENT_RANGE, HeaderValue::from_str(&format!("bytes {a}-{b}/{len}")).expect("ascii"));
            r
        }
        _ => Response::new(Body::from(bytes)),
    };
    let h = resp.headers_mut();
    h.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
    h.insert(header::CONTENT_TYPE, HeaderValue::from_static("audio/wav"));
    Ok(resp)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Waveform {
    pub bins_per_s: f64,
    pub duration_s: f64,
    pub peaks: Vec<f32>,
}

async fn waveform(State(s): State<AppState>, UrlPath(filename): UrlPath<String>) -> Result<Json<Waveform>, ApiError> {
    let path = lock(&s.0).audio_path(&filename)?;
    blocking(move || {
        let clip = read_wav(&path).map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        Ok(Json(Waveform {
            bins_per_s: ENVELOPE_BINS_PER_S,
            duration_s: clip.duration_s(),
            peaks: envelope(&clip, ENVELOPE_BINS_PER_S),
        }))
    })
    .await
}

#[derive(Debug, Serialize)]
struct Ack {
    ok: bool,
}

async fn verdict(State(s): State<AppState>, Json(v): Json<Verdict>) -> Result<Json<Ack>, ApiError> {
    blocking(move || {
        lock(&s.0).submit(v)?;
        Ok(Json(Ack { ok: true }))
    })
    .await
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommitRequest {
    pub accept_all: bool,
}

async fn commit(State(s): State<AppState>, body: Option<Json<CommitRequest>>) -> Result<Json<CommitReport>, ApiError> {
    let req = body.map(|b| b.0).unwrap_or_default();
    blocking(move || {
        let opts = CommitOptions {
            accept_all: req.accept_all,
            session_gap: chrono::Duration::hours(DEFAULT_SESSION_GAP_HOURS),
            n_folds: DEFAULT_FOLDS,
            registry: s.0.registry.as_ref(),
            sources: Vec::new(),
        };
        let report = lock(&s.0).commit(&opts)?;
        Ok(Json(report))
    })
    .await
}
