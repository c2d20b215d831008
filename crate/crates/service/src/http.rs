use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use trialflow_core::session::SessionConfig;

use crate::error::{ApiError, ErrorCode};
use crate::export::{transitions_view, ExportKind};
use crate::requests::{DirectiveRequest, PriorBody};
use crate::store::{SessionId, SessionStore};

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.code {
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Denied | ErrorCode::WrongStatus => StatusCode::CONFLICT,
            ErrorCode::Invalid => StatusCode::UNPROCESSABLE_ENTITY,
        };
        (status, Json(self)).into_response()
    }
}

type AppState = Arc<SessionStore>;
type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("bad request body: {e}")))
}

/// A single assignment or a list of them.
#[derive(Deserialize)]
#[serde(untagged)]
enum PriorsBody {
    Many(Vec<PriorBody>),
    One(PriorBody),
}

#[derive(Deserialize, Default)]
struct InferBody {
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct ExportQuery {
    kind: String,
}

#[derive(Serialize)]
struct Created {
    id: SessionId,
}

async fn create(State(store): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<Created>)> {
    let config: SessionConfig = parse_body(&body)?;
    let id = store.create(config)?;
    Ok((StatusCode::CREATED, Json(Created { id })))
}

async fn show(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = SessionId::parse(&id)?;
    Ok(Json(store.view(&id)?).into_response())
}

async fn directive(State(store): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let id = SessionId::parse(&id)?;
    let req: DirectiveRequest = parse_body(&body)?;
    let prior_requests = store.post_directive(&id, &req)?;
    let status = store.with_session(&id, |s| s.status())?;
    Ok(Json(json!({ "outcome": "Applied", "prior_requests": prior_requests, "status": status })).into_response())
}

async fn pending(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = SessionId::parse(&id)?;
    Ok(Json(store.pending_priors(&id)?).into_response())
}

async fn priors(State(store): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let id = SessionId::parse(&id)?;
    let bodies = match parse_body::<PriorsBody>(&body)? {
        PriorsBody::Many(v) => v,
        PriorsBody::One(b) => vec![b],
    };
    let status = store.set_priors(&id, &bodies)?;
    Ok(Json(json!({ "status": status })).into_response())
}

async fn infer(State(store): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let id = SessionId::parse(&id)?;
    let opts: InferBody = if body.iter().all(u8::is_ascii_whitespace) { InferBody::default() } else { parse_body(&body)? };
    let seed = opts.seed.unwrap_or(0);
    let report = tokio::task::spawn_blocking(move || store.infer(&id, seed))
        .await
        .map_err(|e| ApiError::invalid(format!("inference task failed: {e}")))??;
    Ok(([(header::CONTENT_TYPE, "application/json")], report.to_json()).into_response())
}

async fn export(
    State(store): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let id = SessionId::parse(&id)?;
    let kind: ExportKind = q.kind.parse()?;
    let text = if kind == ExportKind::ReportJson {
        tokio::task::spawn_blocking(move || store.export(&id, kind))
            .await
            .map_err(|e| ApiError::invalid(format!("export task failed: {e}")))??
    } else {
        store.export(&id, kind)?
    };
    Ok(([(header::CONTENT_TYPE, kind.content_type())], text).into_response())
}

async fn transitions(State(store): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let id = SessionId::parse(&id)?;
    Ok(Json(store.with_session(&id, transitions_view)?).into_response())
}

pub fn router(store: Arc<SessionStore>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/directives", post(directive))
        .route("/sessions/{id}/pending-priors", get(pending))
        .route("/sessions/{id}/priors", post(priors))
        .route("/sessions/{id}/infer", post(infer))
        .route("/sessions/{id}/export", get(export))
        .route("/sessions/{id}/transitions", get(transitions))
        .with_state(store)
}

pub async fn serve(store: Arc<SessionStore>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(store)).await
}
