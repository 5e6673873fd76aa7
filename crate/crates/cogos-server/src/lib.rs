//! HTTP/JSON service over the kernel: synchronous runs, evaluation
//! suites, and long-lived interactive sessions for the operator console.
//!
//! The service reads run configs from its own filesystem (`config_path`
//! in requests); it is a local orchestration daemon, not an internet-facing
//! API.

mod session;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path as AxumPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::Deserialize;

use cogos_core::api::{
    ErrorKind, ErrorResponse, EvalRequest, EvalResponse, EventsResponse, HealthResponse,
    InputSubmitRequest, RunRequest, RunResponse, SessionCloseResponse, SessionCreateRequest,
    SessionCreateResponse, TaskSubmitRequest, TaskSubmitResponse, TranscriptDto,
};
use cogos_core::config::{ConfigError, RunConfig, Session};
use cogos_core::eval::{run_suite, EvalError};

use crate::session::LiveSession;

pub struct AppState {
    sessions: Mutex<HashMap<String, Arc<LiveSession>>>,
    next_session_id: AtomicU64,
}

impl AppState {
    pub fn new() -> Arc<AppState> {
        Arc::new(AppState {
            sessions: Mutex::new(HashMap::new()),
            next_session_id: AtomicU64::new(1),
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/run", post(run))
        .route("/v1/eval", post(eval))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/task", post(submit_task))
        .route("/v1/sessions/{id}/events", get(poll_events))
        .route("/v1/sessions/{id}/input", post(submit_input))
        .route("/v1/sessions/{id}", delete(close_session))
        .with_state(state)
}

/// Binds an ephemeral or fixed address and serves until the process ends.
/// Returns the bound address once listening.
pub async fn serve(
    state: Arc<AppState>,
    bind: &str,
) -> std::io::Result<(std::net::SocketAddr, tokio::task::JoinHandle<()>)> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    let addr = listener.local_addr()?;
    let app = router(state);
    let handle = tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, app).await {
            tracing::error!("server stopped: {e}");
        }
    });
    Ok((addr, handle))
}

struct ApiError {
    status: StatusCode,
    body: ErrorResponse,
}

impl ApiError {
    fn config(message: impl Into<String>) -> ApiError {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: ErrorResponse {
                error: message.into(),
                kind: ErrorKind::Config,
            },
        }
    }

    fn not_found(message: impl Into<String>) -> ApiError {
        ApiError {
            status: StatusCode::NOT_FOUND,
            body: ErrorResponse {
                error: message.into(),
                kind: ErrorKind::NotFound,
            },
        }
    }

    fn internal(message: impl Into<String>) -> ApiError {
        ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorResponse {
                error: message.into(),
                kind: ErrorKind::Internal,
            },
        }
    }
}

impl From<ConfigError> for ApiError {
    fn from(e: ConfigError) -> ApiError {
        ApiError::config(e.to_string())
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> ApiError {
        ApiError::config(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

async fn health() -> Json<HealthResponse> {
    Json(HealthResponse {
        status: "ok".to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    })
}

fn load_config(path: &str) -> Result<RunConfig, ApiError> {
    RunConfig::load(Path::new(path)).map_err(ApiError::from)
}

async fn run(Json(request): Json<RunRequest>) -> Result<Json<RunResponse>, ApiError> {
    let config = load_config(&request.config_path)?;
    let session = Session::build(&config, None)?;
    let assignments = session.assignments(&request.task, request.robot.as_deref())?;
    let transcripts = session.run_assignments(&assignments).await;
    session.persist_memory()?;

    let out_dir = &config.output.dir;
    std::fs::create_dir_all(out_dir).map_err(|e| ApiError::internal(e.to_string()))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for transcript in &transcripts {
        let path = out_dir.join(format!("{}.transcript.jsonl", transcript.robot_id));
        transcript
            .write_jsonl(&path)
            .map_err(|e| ApiError::internal(e.to_string()))?;
        paths.push(path);
    }

    let primary = &transcripts[0];
    Ok(Json(RunResponse {
        outcome: primary.outcome,
        exit_code: primary.outcome.exit_code(),
        transcripts: transcripts.iter().map(TranscriptDto::from).collect(),
        transcript_paths: paths.iter().map(|p| p.display().to_string()).collect(),
    }))
}

async fn eval(Json(request): Json<EvalRequest>) -> Result<Json<EvalResponse>, ApiError> {
    let config = load_config(&request.config_path)?;
    let report = run_suite(&config, Path::new(&request.suite_path), request.ablate.as_deref())
        .await?;
    std::fs::create_dir_all(&config.output.dir).map_err(|e| ApiError::internal(e.to_string()))?;
    let report_path = config.output.dir.join("report.json");
    let json = serde_json::to_string_pretty(&report).map_err(|e| ApiError::internal(e.to_string()))?;
    std::fs::write(&report_path, format!("{json}\n")).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(EvalResponse {
        rendered: report.rendered(),
        report,
        report_path: report_path.display().to_string(),
    }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(request): Json<SessionCreateRequest>,
) -> Result<Json<SessionCreateResponse>, ApiError> {
    let config = load_config(&request.config_path)?;
    // Process-qualified ids keep save directories distinct across daemons
    // sharing one output tree.
    let id = format!(
        "{}-{}",
        std::process::id(),
        state.next_session_id.fetch_add(1, Ordering::SeqCst)
    );
    let live = LiveSession::build(id.clone(), &config)?;
    let robots = live
        .session
        .robots
        .iter()
        .map(|r| r.profile.robot_id.clone())
        .collect();
    state.sessions.lock().unwrap().insert(id.clone(), live);
    Ok(Json(SessionCreateResponse {
        session_id: id,
        robots,
    }))
}

fn find_session(state: &AppState, id: &str) -> Result<Arc<LiveSession>, ApiError> {
    state
        .sessions
        .lock()
        .unwrap()
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("no session `{id}`")))
}

async fn submit_task(
    State(state): State<Arc<AppState>>,
    AxumPath(id): AxumPath<String>,
    Json(request): Json<TaskSubmitRequest>,
) -> Result<Json<TaskSubmitResponse>, ApiError> {
    let live = find_session(&state, &id)?;
    let assignments = live.submit(&request.task, request.robot.as_deref())?;
    Ok(Json(TaskSubmitResponse { assignments }))
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    #[serde(default)]
    after: u64,
    #[serde(default = "default_wait_ms")]
    wait_ms: u64,
}

fn default_wait_ms() -> u64 {
    250
}

async fn poll_events(
    State(state): State<Arc<AppState>>,
    AxumPath(id): AxumPath<String>,
    Query(query): Query<EventsQuery>,
) -> Result<Json<EventsResponse>, ApiError> {
    let live = find_session(&state, &id)?;
    // Cap the long-poll to keep proxies and tests happy.
    let wait = Duration::from_millis(query.wait_ms.min(10_000));
    let (events, next_after, busy) = live.events_after(query.after, wait).await;
    Ok(Json(EventsResponse {
        events,
        next_after,
        busy,
    }))
}

async fn submit_input(
    State(state): State<Arc<AppState>>,
    AxumPath(id): AxumPath<String>,
    Json(request): Json<InputSubmitRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let live = find_session(&state, &id)?;
    if request.text.trim().is_empty() {
        return Err(ApiError::config("input text must be non-empty"));
    }
    live.send_input(request.text.trim());
    Ok(Json(serde_json::json!({})))
}

async fn close_session(
    State(state): State<Arc<AppState>>,
    AxumPath(id): AxumPath<String>,
) -> Result<Json<SessionCloseResponse>, ApiError> {
    let live = state
        .sessions
        .lock()
        .unwrap()
        .remove(&id)
        .ok_or_else(|| ApiError::not_found(format!("no session `{id}`")))?;
    let saved = live.save().map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(Json(SessionCloseResponse {
        saved: saved.iter().map(|p| p.display().to_string()).collect(),
    }))
}
