//! HTTP service hosting planning sessions over one city fixture.
//!
//! | method | path                    | body                 | reply            |
//! |--------|-------------------------|----------------------|------------------|
//! | POST   | `/sessions`             | `{"query", "image"?}`| `{"session_id", "outcome"}` |
//! | GET    | `/sessions/{id}/trace`  |                      | session trace    |
//! | GET    | `/sessions/{id}/plan`   |                      | answer           |
//! | POST   | `/sessions/{id}/refine` | refinement           | updated trace    |
//! | GET    | `/tools/health`         |                      | service status   |
//!
//! Errors are `{"error": {"code", "message"}}` with a 4xx/5xx status.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Request, State};
use axum::http::{HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::{Mutex, RwLock};
use wayfarer_core::agent::{refine_session, run_session, Adapters, AgentError, Answer, Refinement, SessionConfig, SessionTrace};
use wayfarer_core::tools::{call, FixtureStore, ToolCall, ToolExecutor, ToolId, ToolResponse};

use crate::fixtures::City;

pub const REQUEST_ID_HEADER: &str = "x-request-id";

pub struct AppState {
    city: City,
    session_config: SessionConfig,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<SessionTrace>>>>,
    next_session: AtomicU64,
    next_request: AtomicU64,
}

impl AppState {
    pub fn new(city: City, session_config: SessionConfig) -> Arc<AppState> {
        Arc::new(AppState {
            city,
            session_config,
            sessions: RwLock::new(BTreeMap::new()),
            next_session: AtomicU64::new(1),
            next_request: AtomicU64::new(1),
        })
    }
}

/// Tool executor that sleeps before each call when latency is configured.
pub struct DelayedTools<'a> {
    pub store: &'a FixtureStore,
    pub latency: Duration,
}

impl ToolExecutor for DelayedTools<'_> {
    fn execute(&mut self, tc: &ToolCall) -> ToolResponse {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        call(tc, self.store)
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn not_found(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id:?}"))
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "malformed_body", r.body_text())
    }
}

impl From<AgentError> for ApiError {
    fn from(e: AgentError) -> Self {
        let (status, code) = match &e {
            AgentError::LockExcludeConflict(_) => (StatusCode::CONFLICT, "lock_exclude_conflict"),
            AgentError::NotComplete(_) => (StatusCode::CONFLICT, "session_not_complete"),
            AgentError::NotShortlisted(_) => (StatusCode::UNPROCESSABLE_ENTITY, "not_shortlisted"),
            AgentError::Currency { .. } | AgentError::Window(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_refinement"),
            AgentError::ZeroSteps => (StatusCode::BAD_REQUEST, "invalid_config"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": { "code": self.code, "message": self.message } }))).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NewSession {
    pub query: String,
    #[serde(default)]
    pub image: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub outcome: String,
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Result<Json<NewSession>, JsonRejection>,
) -> Result<Json<SessionCreated>, ApiError> {
    let Json(req) = body?;
    let worker = app.clone();
    let trace = tokio::task::spawn_blocking(move || {
        let city = &worker.city;
        let adapters =
            Adapters { catalog: &city.store.pois, gazetteer: &city.store.gazetteer, recognizer: &city.recognizer };
        let mut tools = DelayedTools { store: &city.store, latency: Duration::from_millis(city.service.latency_ms) };
        run_session(&req.query, req.image.as_deref(), &worker.session_config, adapters, &mut tools)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;

    let id = format!("s{}", app.next_session.fetch_add(1, Ordering::Relaxed));
    let outcome = trace.outcome().label().to_string();
    tracing::info!(session = %id, outcome = %outcome, steps = trace.steps.len(), "session created");
    app.sessions.write().await.insert(id.clone(), Arc::new(Mutex::new(trace)));
    Ok(Json(SessionCreated { session_id: id, outcome }))
}

async fn session(app: &AppState, id: &str) -> Result<Arc<Mutex<SessionTrace>>, ApiError> {
    app.sessions.read().await.get(id).cloned().ok_or_else(|| ApiError::not_found(id))
}

async fn get_trace(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<SessionTrace>, ApiError> {
    let s = session(&app, &id).await?;
    let trace = s.lock().await.clone();
    Ok(Json(trace))
}

async fn get_plan(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Answer>, ApiError> {
    let s = session(&app, &id).await?;
    let answer = s.lock().await.answer.clone();
    Ok(Json(answer))
}

async fn refine(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<Refinement>, JsonRejection>,
) -> Result<Json<SessionTrace>, ApiError> {
    let s = session(&app, &id).await?;
    let Json(r) = body?;
    // held across the update so concurrent refinements of one session serialize
    let mut guard = s.lock().await;
    let next = refine_session(&guard, &r)?;
    *guard = next.clone();
    tracing::info!(session = %id, outcome = next.outcome().label(), "session refined");
    Ok(Json(next))
}

async fn health(State(app): State<Arc<AppState>>) -> Json<serde_json::Value> {
    let offline = &app.city.store.failures.offline;
    let tools: BTreeMap<&str, &str> =
        ToolId::ALL.iter().map(|t| (t.name(), if offline.contains(t) { "offline" } else { "ok" })).collect();
    Json(json!({
        "status": "ok",
        "pois": app.city.store.pois.len(),
        "tools": tools,
        "sessions": app.sessions.read().await.len(),
    }))
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no_route", "no such endpoint")
}

/// Tags every request with an id (the caller's `x-request-id`, or a fresh
/// one), logs it and echoes it on the response.
async fn request_id(State(app): State<Arc<AppState>>, mut req: Request, next: Next) -> Response {
    let id = req
        .headers()
        .get(REQUEST_ID_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(String::from)
        .unwrap_or_else(|| format!("req-{}", app.next_request.fetch_add(1, Ordering::Relaxed)));
    let value = HeaderValue::from_str(&id).unwrap_or_else(|_| HeaderValue::from_static("invalid"));
    req.headers_mut().insert(REQUEST_ID_HEADER, value.clone());
    let (method, path) = (req.method().clone(), req.uri().path().to_string());
    let span = tracing::info_span!("request", request_id = %id);
    let _enter = span.enter();
    let mut resp = next.run(req).await;
    tracing::info!(%method, %path, status = resp.status().as_u16(), "handled");
    resp.headers_mut().insert(REQUEST_ID_HEADER, value);
    resp
}

pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/trace", get(get_trace))
        .route("/sessions/{id}/plan", get(get_plan))
        .route("/sessions/{id}/refine", post(refine))
        .route("/tools/health", get(health))
        .fallback(fallback)
        .layer(middleware::from_fn_with_state(app.clone(), request_id))
        .with_state(app)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutting down");
}

/// Binds and serves until interrupted.
pub async fn serve(app: Arc<AppState>, bind: SocketAddr) -> anyhow::Result<()> {
    let listener =
        tokio::net::TcpListener::bind(bind).await.map_err(|e| anyhow::anyhow!("cannot bind {bind}: {e}"))?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(app)).with_graceful_shutdown(shutdown_signal()).await?;
    Ok(())
}
