//! JSON-over-HTTP front end for the orchestrator.
//!
//! | method | path                    | body                    | reply                 |
//! |--------|-------------------------|-------------------------|-----------------------|
//! | POST   | /sessions               | `{"user"?: string}`     | `{"session_id"}`      |
//! | GET    | /sessions/{id}          |                         | session transcript    |
//! | POST   | /sessions/{id}/query    | `{"text"}`              | query response        |
//! | POST   | /sessions/{id}/rank     | `{"turn", "ordering"}`  | ranking receipt       |
//! | GET    | /methods                |                         | method summaries      |
//! | GET    | /methods/{id}           |                         | `{"summary","method"}`|
//! | DELETE | /methods/{id}           |                         | `{"removed"}`         |
//! | POST   | /repository/reset       |                         | `{"status":"ok"}`     |
//! | GET    | /healthz                |                         | `{"status":"ok"}`     |
//!
//! Errors are `{"code", "message"}` with a matching status.

use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use methodforge::orchestrator::{MethodSummary, QueryResponse, RankingReceipt};
use methodforge::{Method, MethodId, Orchestrator, OrchestratorError, SessionTranscript};
use serde::{Deserialize, Serialize};

pub type Shared = Arc<Mutex<Orchestrator>>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
            },
        }
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        let status = match &e {
            OrchestratorError::SessionNotFound(_)
            | OrchestratorError::TurnNotFound { .. }
            | OrchestratorError::MethodNotFound(_) => StatusCode::NOT_FOUND,
            OrchestratorError::AlreadyRanked { .. } => StatusCode::CONFLICT,
            OrchestratorError::InvalidOrdering(_) | OrchestratorError::Feedback(_) | OrchestratorError::EmptyQuery => {
                StatusCode::BAD_REQUEST
            }
            OrchestratorError::Gateway(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_body", e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs `f` on a blocking thread with the orchestrator locked. Gateway
/// calls block, so they must stay off the async workers.
async fn with_orchestrator<T, F>(state: &Shared, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Orchestrator) -> Result<T, OrchestratorError> + Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || {
        let mut guard = state.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard).map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct CreateSession {
    #[serde(default)]
    pub user: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryBody {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RankBody {
    pub turn: usize,
    pub ordering: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MethodDetail {
    pub summary: MethodSummary,
    pub method: Method,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Removed {
    pub removed: MethodId,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Status {
    pub status: String,
}

fn ok() -> Json<Status> {
    Json(Status { status: "ok".into() })
}

async fn create_session(
    State(state): State<Shared>,
    body: Option<Json<CreateSession>>,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let user = body.and_then(|Json(b)| b.user);
    let session_id = with_orchestrator(&state, move |o| Ok(o.create_session(user))).await?;
    Ok((StatusCode::CREATED, Json(SessionCreated { session_id })))
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<SessionTranscript> {
    with_orchestrator(&state, move |o| o.session(&id).cloned()).await.map(Json)
}

async fn query(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<QueryBody>, JsonRejection>,
) -> ApiResult<QueryResponse> {
    let Json(body) = body?;
    with_orchestrator(&state, move |o| o.handle_query(&id, &body.text)).await.map(Json)
}

async fn rank(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<RankBody>, JsonRejection>,
) -> ApiResult<RankingReceipt> {
    let Json(body) = body?;
    with_orchestrator(&state, move |o| o.submit_ranking(&id, body.turn, &body.ordering))
        .await
        .map(Json)
}

async fn list_methods(State(state): State<Shared>) -> ApiResult<Vec<MethodSummary>> {
    with_orchestrator(&state, |o| Ok(o.list_methods())).await.map(Json)
}

async fn get_method(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<MethodDetail> {
    with_orchestrator(&state, move |o| {
        let id = o.resolve_method(&id)?;
        let (method, summary) = o.method(&id)?;
        Ok(MethodDetail {
            method: method.clone(),
            summary,
        })
    })
    .await
    .map(Json)
}

async fn delete_method(State(state): State<Shared>, Path(id): Path<String>) -> ApiResult<Removed> {
    with_orchestrator(&state, move |o| {
        let id = o.resolve_method(&id)?;
        o.remove_method(&id)?;
        Ok(Removed { removed: id })
    })
    .await
    .map(Json)
}

async fn reset(State(state): State<Shared>) -> ApiResult<Status> {
    with_orchestrator(&state, |o| o.reset()).await?;
    Ok(ok())
}

async fn healthz() -> Json<Status> {
    ok()
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/query", post(query))
        .route("/sessions/{id}/rank", post(rank))
        .route("/methods", get(list_methods))
        .route("/methods/{id}", get(get_method).delete(delete_method))
        .route("/repository/reset", post(reset))
        .with_state(state)
}

pub async fn serve(orchestrator: Orchestrator, bind: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    let app = router(Arc::new(Mutex::new(orchestrator)));
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
