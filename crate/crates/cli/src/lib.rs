//! Review API for gold-set curation, served by `pen review-serve`.
//!
//! All bodies are JSON. Field names are those of [`PairView`],
//! [`ReviewStats`], [`DecisionRequest`] and [`Decision`]; errors come back as
//! `{"error": code, "message": text}`.

use std::sync::{Arc, RwLock};

use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use pen_core::abbrev::MarkerTable;
use pen_core::review::{Decision, DecisionRequest, PairView, ReviewStats, ReviewStatus, ReviewStore};
use pen_core::Error;
use serde::{Deserialize, Serialize};

pub const TOKEN_HEADER: &str = "x-review-token";

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<RwLock<ReviewStore>>,
    pub markers: Arc<MarkerTable>,
    /// Shared secret required in [`TOKEN_HEADER`] when set.
    pub token: Option<String>,
}

impl AppState {
    pub fn new(store: ReviewStore, markers: MarkerTable, token: Option<String>) -> Self {
        Self {
            store: Arc::new(RwLock::new(store)),
            markers: Arc::new(markers),
            token,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError(StatusCode, ErrorBody);

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self(
            status,
            ErrorBody {
                error: code.into(),
                message: message.into(),
            },
        )
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::UnknownPair(_) => (StatusCode::NOT_FOUND, "unknown_pair"),
            Error::InvalidDecision(_) => (StatusCode::BAD_REQUEST, "invalid_decision"),
            Error::StaleStatus { .. } => (StatusCode::CONFLICT, "stale_status"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{e}");
        }
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
pub struct ListQuery {
    pub status: Option<String>,
}

async fn list_pairs(State(st): State<AppState>, Query(q): Query<ListQuery>) -> ApiResult<Vec<PairView>> {
    let status = match q.status.as_deref() {
        None | Some("") | Some("all") => None,
        Some(s) => Some(ReviewStatus::parse(s).ok_or_else(|| {
            ApiError::new(StatusCode::BAD_REQUEST, "invalid_status", format!("unknown status {s:?}"))
        })?),
    };
    Ok(Json(st.store.read().expect("store lock").list(status)))
}

async fn get_pair(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<PairView> {
    Ok(Json(st.store.read().expect("store lock").get(&id)?))
}

async fn decide(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<DecisionRequest>,
) -> ApiResult<Decision> {
    // The write lock serializes appends; the reply goes out only after the
    // log line is synced.
    let store = st.store.clone();
    let decision = tokio::task::spawn_blocking(move || store.write().expect("store lock").decide(&id, req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok(Json(decision))
}

async fn stats(State(st): State<AppState>) -> ApiResult<ReviewStats> {
    Ok(Json(st.store.read().expect("store lock").stats()))
}

async fn markers(State(st): State<AppState>) -> Json<MarkerTable> {
    Json((*st.markers).clone())
}

async fn check_token(State(st): State<AppState>, req: Request, next: Next) -> Response {
    if let Some(token) = &st.token {
        let given = req.headers().get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong review token")
                .into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/pairs", get(list_pairs))
        .route("/api/pairs/{id}", get(get_pair))
        .route("/api/pairs/{id}/decision", post(decide))
        .route("/api/stats", get(stats))
        .route("/api/markers", get(markers))
        .route_layer(middleware::from_fn_with_state(state.clone(), check_token))
        .with_state(state)
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review API listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
