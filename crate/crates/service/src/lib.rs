//! HTTP JSON API over a [`SessionStore`].
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/sessions` | optional overrides | `{session_id}` |
//! | POST | `/sessions/{id}/utterances` | `{text}` | `{response, movie_id?, fallback, debug_url}` |
//! | GET | `/sessions/{id}` | | transcript |
//! | GET | `/sessions/{id}/turns/{turn}/debug` | | ranking debug dump |
//! | GET | `/health` | | `{status, sessions}` |
//!
//! Errors are `{code, message}` with a matching status.

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use retrocrs_core::catalog::MovieId;
use retrocrs_core::pipeline::TurnDebug;
use retrocrs_core::session::{Session, SessionError, SessionOverrides, SessionStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status: status.as_u16(), code: code.to_owned(), message: message.into() }
    }

    fn not_ready() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "not_ready", "pipeline is still loading")
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::NotFound(_) | SessionError::TurnNotFound { .. } => StatusCode::NOT_FOUND,
            SessionError::InvalidInput(_) => StatusCode::BAD_REQUEST,
            SessionError::Journal { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let code = match &e {
            SessionError::NotFound(_) => "session_not_found",
            SessionError::TurnNotFound { .. } => "turn_not_found",
            SessionError::InvalidInput(_) => "invalid_request",
            SessionError::Journal { .. } => "journal_failed",
        };
        Self::new(status, code, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceReply {
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub movie_id: Option<MovieId>,
    pub fallback: bool,
    pub debug_url: String,
    pub turn: usize,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub sessions: usize,
}

/// Shared service state. Starts empty and becomes ready once a store is installed.
#[derive(Clone)]
pub struct AppState {
    store: Arc<OnceLock<Arc<SessionStore>>>,
    turn_timeout: Duration,
}

impl AppState {
    pub fn loading(turn_timeout: Duration) -> Self {
        AppState { store: Arc::new(OnceLock::new()), turn_timeout }
    }

    pub fn ready(store: SessionStore, turn_timeout: Duration) -> Self {
        let state = Self::loading(turn_timeout);
        state.install(store);
        state
    }

    /// Returns false when a store was already installed.
    pub fn install(&self, store: SessionStore) -> bool {
        self.store.set(Arc::new(store)).is_ok()
    }

    fn store(&self) -> Result<Arc<SessionStore>, ApiError> {
        self.store.get().cloned().ok_or_else(ApiError::not_ready)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/utterances", post(post_utterance))
        .route("/sessions/{id}/turns/{turn}/debug", get(turn_debug))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn health(State(state): State<AppState>) -> Result<Json<Health>, ApiError> {
    let store = state.store()?;
    Ok(Json(Health { status: "ok".into(), sessions: store.len() }))
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<Json<Created>, ApiError> {
    let store = state.store()?;
    let overrides: SessionOverrides = if body.iter().all(u8::is_ascii_whitespace) {
        SessionOverrides::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("session overrides: {e}")))?
    };
    let session_id = store.create(&overrides)?;
    tracing::debug!(%session_id, "session created");
    Ok(Json(Created { session_id }))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Session>, ApiError> {
    Ok(Json(state.store()?.get(&id)?))
}

async fn turn_debug(State(state): State<AppState>, Path((id, turn)): Path<(String, usize)>) -> Result<Json<TurnDebug>, ApiError> {
    Ok(Json(state.store()?.debug(&id, turn)?))
}

async fn post_utterance(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<UtteranceRequest>, JsonRejection>,
) -> Result<Json<UtteranceReply>, ApiError> {
    let store = state.store()?;
    let Json(req) = body?;
    let session = id.clone();
    let task = tokio::task::spawn_blocking(move || store.post(&session, &req.text));
    let reply = match tokio::time::timeout(state.turn_timeout, task).await {
        Err(_) => {
            tracing::warn!(session = %id, "turn exceeded {:?}", state.turn_timeout);
            return Err(ApiError::new(
                StatusCode::GATEWAY_TIMEOUT,
                "turn_timeout",
                format!("no response within {} ms", state.turn_timeout.as_millis()),
            ));
        }
        Ok(Err(e)) => return Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())),
        Ok(Ok(r)) => r?,
    };
    if reply.outcome.fallback {
        tracing::info!(session = %id, reason = ?reply.outcome.fallback_reason, "fallback response");
    }
    Ok(Json(UtteranceReply {
        response: reply.outcome.response.text,
        movie_id: reply.outcome.response.recommended_movie_id,
        fallback: reply.outcome.fallback,
        debug_url: format!("/sessions/{id}/turns/{}/debug", reply.turn),
        turn: reply.turn,
        latency_ms: reply.latency_ms,
    }))
}
