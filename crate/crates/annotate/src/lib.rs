//! HTTP/JSON front end to [`AnnotationStore`]: annotators poll for
//! candidates, fetch their audio and post labels.
//!
//! | route | |
//! |---|---|
//! | `GET /api/next?annotator=ID` | leased candidate, or 204 when none is left |
//! | `POST /api/label` | `{candidate_id, annotator_id, label}` → new state |
//! | `GET /api/audio/{candidate_id}` | WAV bytes of the 5 s context clip |
//! | `GET /api/stats` | state counts and agreement rates |
//!
//! Anything else falls through to the static UI bundle when one is set.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fillerkit_core::annotation::{AgreementStats, AnnotationError, AnnotationStore, CandidateState};
use fillerkit_core::candidates::CandidateClip;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

/// Wall clock in milliseconds since the Unix epoch.
pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

#[derive(Clone)]
pub struct AppState {
    /// Every mutation goes through this lock, so the label log has a single
    /// writer.
    pub store: Arc<Mutex<AnnotationStore>>,
    /// Directory that candidate `clip_path`s are relative to.
    pub clip_root: PathBuf,
    pub clock: Clock,
}

impl AppState {
    pub fn new(store: AnnotationStore, clip_root: PathBuf) -> Self {
        Self {
            store: Arc::new(Mutex::new(store)),
            clip_root,
            clock: system_clock(),
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }
}

#[derive(Debug, Deserialize)]
pub struct NextQuery {
    pub annotator: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextResponse {
    pub candidate: CandidateClip,
    pub audio_url: String,
    pub state: CandidateState,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelRequest {
    pub candidate_id: String,
    pub annotator_id: String,
    pub label: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct ApiError(StatusCode, String);

impl From<AnnotationError> for ApiError {
    fn from(e: AnnotationError) -> Self {
        let status = match &e {
            AnnotationError::UnknownAnnotator(_) => StatusCode::FORBIDDEN,
            AnnotationError::UnknownCandidate(_) => StatusCode::NOT_FOUND,
            AnnotationError::InvalidLabel(_) => StatusCode::BAD_REQUEST,
            AnnotationError::Conflict(_) => StatusCode::CONFLICT,
            AnnotationError::Log { .. } | AnnotationError::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, AnnotationStore> {
    // A panic while holding the lock cannot leave a half-applied record:
    // records are pushed last.
    state.store.lock().unwrap_or_else(|p| p.into_inner())
}

async fn next(State(state): State<AppState>, Query(q): Query<NextQuery>) -> Result<Response, ApiError> {
    let now = (state.clock)();
    let mut store = lock(&state);
    match store.next_candidate(&q.annotator, now)? {
        None => Ok(StatusCode::NO_CONTENT.into_response()),
        Some(c) => {
            let st = store.state(&c.id)?;
            Ok(Json(NextResponse {
                audio_url: format!("/api/audio/{}", c.id),
                candidate: c,
                state: st,
            })
            .into_response())
        }
    }
}

async fn label(State(state): State<AppState>, Json(req): Json<LabelRequest>) -> Result<Json<CandidateState>, ApiError> {
    let now = (state.clock)();
    let st = lock(&state).submit(&req.candidate_id, &req.annotator_id, &req.label, now)?;
    log::info!("{} labelled {} as {}", req.annotator_id, req.candidate_id, req.label);
    Ok(Json(st))
}

async fn audio(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let rel = lock(&state).candidate(&id)?.clip_path.clone();
    let path = state.clip_root.join(&rel);
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(([(header::CONTENT_TYPE, "audio/wav")], bytes).into_response()),
        Err(e) => Err(ApiError(
            StatusCode::NOT_FOUND,
            format!("audio for {id} unavailable ({}): {e}", path.display()),
        )),
    }
}

async fn stats(State(state): State<AppState>) -> Json<AgreementStats> {
    Json(lock(&state).stats())
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/next", get(next))
        .route("/api/label", post(label))
        .route("/api/audio/{candidate_id}", get(audio))
        .route("/api/stats", get(stats))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: AppState, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation server listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
