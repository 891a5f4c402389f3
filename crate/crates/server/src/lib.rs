//! HTTP/JSON front end for the selection engine.
//!
//! Every endpoint takes file paths on the server's filesystem, runs the
//! matching core operation on the blocking pool and answers with the
//! operation's report, or with an [`ErrorBody`] whose `exit_code` the CLI
//! passes through.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::sync::Mutex;

use lowconf_core::api::{self, ErrorBody, GenRequest, ScoreRequest, SubsetRequest};
use lowconf_core::pipeline::{RunReport, TransferReport};
use lowconf_core::{ErrorClass, PipelineConfig, TransferConfig};

#[derive(Clone, Default)]
pub struct AppState {
    // jobs write into caller-chosen directories; one at a time keeps a
    // single writer per output
    jobs: Arc<Mutex<()>>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl From<lowconf_core::Error> for ApiError {
    fn from(e: lowconf_core::Error) -> Self {
        let body = ErrorBody::from(&e);
        let status = match body.class {
            ErrorClass::Config => StatusCode::BAD_REQUEST,
            ErrorClass::Data | ErrorClass::Numeric => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError { status, body }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody {
                error: r.body_text(),
                kind: "bad_request".into(),
                class: ErrorClass::Config,
                exit_code: ErrorClass::Config.exit_code(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Reply<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(state: &AppState, job: F) -> Reply<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> lowconf_core::Result<T> + Send + 'static,
{
    let _guard = state.jobs.lock().await;
    match tokio::task::spawn_blocking(job).await {
        Ok(result) => {
            if let Err(e) = &result {
                tracing::warn!(kind = e.kind(), "request failed: {e}");
            }
            Ok(Json(result?))
        }
        Err(join) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody {
                error: format!("worker panicked: {join}"),
                kind: "internal".into(),
                class: ErrorClass::Numeric,
                exit_code: ErrorClass::Numeric.exit_code(),
            },
        }),
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

async fn gen(
    State(state): State<AppState>,
    req: Result<Json<GenRequest>, JsonRejection>,
) -> Reply<api::GenResponse> {
    let Json(req) = req?;
    blocking(&state, move || api::gen(&req)).await
}

async fn run(
    State(state): State<AppState>,
    req: Result<Json<PipelineConfig>, JsonRejection>,
) -> Reply<RunReport> {
    let Json(config) = req?;
    tracing::info!(cache = %config.cache.display(), k = config.k, "run");
    blocking(&state, move || {
        lowconf_core::run_once(&config).map(|out| out.report)
    })
    .await
}

async fn transfer(
    State(state): State<AppState>,
    req: Result<Json<TransferConfig>, JsonRejection>,
) -> Reply<TransferReport> {
    let Json(config) = req?;
    tracing::info!(checkpoint = %config.checkpoint.display(), cache = %config.cache.display(), "transfer");
    blocking(&state, move || {
        lowconf_core::transfer_select(&config).map(|out| out.report)
    })
    .await
}

async fn score(
    State(state): State<AppState>,
    req: Result<Json<ScoreRequest>, JsonRejection>,
) -> Reply<api::ScoreResponse> {
    let Json(req) = req?;
    blocking(&state, move || api::score(&req)).await
}

async fn subset(
    State(state): State<AppState>,
    req: Result<Json<SubsetRequest>, JsonRejection>,
) -> Reply<api::SubsetResponse> {
    let Json(req) = req?;
    blocking(&state, move || api::subset(&req)).await
}

pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/gen", post(gen))
        .route("/v1/run", post(run))
        .route("/v1/transfer", post(transfer))
        .route("/v1/score", post(score))
        .route("/v1/subset", post(subset))
        .with_state(AppState::default())
}

/// Serves [`router`] on an already-bound listener until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router())
        .with_graceful_shutdown(shutdown)
        .await
}
