//! JSON-over-HTTP facade. Engine calls block, so each handler hops onto the
//! blocking pool.

use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use strategist_core::service::{BankFilter, CreateSession, Service, ServiceError};

#[derive(Clone)]
struct AppState {
    service: Arc<Service>,
    token: Option<Arc<str>>,
}

#[derive(Debug, Deserialize)]
pub struct TurnRequest {
    pub utterance: String,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

pub struct ApiError(StatusCode, String);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        let code = match &e {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            e if e.is_conflict() => StatusCode::CONFLICT,
            ServiceError::Engine(strategist_core::EngineError::EvolutionDisabled) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Service) -> Result<T, ServiceError> + Send + 'static,
{
    let svc = state.service.clone();
    tokio::task::spawn_blocking(move || f(&svc))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
        .map(Json)
        .map_err(ApiError::from)
}

async fn create_session(State(s): State<AppState>, body: Option<Json<CreateSession>>) -> Response {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    match blocking(&s, move |svc| svc.create_session(req)).await {
        Ok(info) => (StatusCode::CREATED, info).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn turn(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<TurnRequest>,
) -> impl IntoResponse {
    blocking(&s, move |svc| svc.handle_turn(&id, &req.utterance)).await
}

async fn session_info(State(s): State<AppState>, Path(id): Path<String>) -> impl IntoResponse {
    blocking(&s, move |svc| svc.session_info(&id)).await
}

async fn delete_session(State(s): State<AppState>, Path(id): Path<String>) -> Response {
    match blocking(&s, move |svc| svc.delete_session(&id)).await {
        Ok(_) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => e.into_response(),
    }
}

async fn bank(State(s): State<AppState>, Query(filter): Query<BankFilter>) -> impl IntoResponse {
    blocking(&s, move |svc| Ok(svc.bank_view(&filter))).await
}

async fn analytics(State(s): State<AppState>) -> impl IntoResponse {
    blocking(&s, |svc| svc.analytics()).await
}

async fn evolve(State(s): State<AppState>) -> impl IntoResponse {
    blocking(&s, |svc| svc.evolve()).await
}

async fn epochs(State(s): State<AppState>) -> impl IntoResponse {
    blocking(&s, |svc| Ok(svc.epochs())).await
}

async fn auth(State(s): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == &**token);
        if !ok {
            return ApiError(StatusCode::UNAUTHORIZED, "missing or wrong bearer token".into()).into_response();
        }
    }
    next.run(req).await
}

/// Routes over `service`. With `token` set, every request needs
/// `Authorization: Bearer <token>`.
pub fn router(service: Arc<Service>, token: Option<String>) -> Router {
    let state = AppState {
        service,
        token: token.filter(|t| !t.is_empty()).map(Arc::from),
    };
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info).delete(delete_session))
        .route("/sessions/{id}/turns", post(turn))
        .route("/bank", get(bank))
        .route("/analytics", get(analytics))
        .route("/evolve", post(evolve))
        .route("/epochs", get(epochs))
        .route_layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn serve(service: Arc<Service>, bind: &str, token: Option<String>) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!(addr = %listener.local_addr()?, auth = token.is_some(), "listening");
    axum::serve(listener, router(service, token))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

