use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};

use super::{ApiError, Route, Studio};

/// Overrides the checkpoint path given on the command line.
pub const CHECKPOINT_ENV: &str = "LOGOFORGE_CHECKPOINT";

/// The environment override if set, else `cli`.
pub fn resolve_checkpoint(cli: Option<&Path>) -> Option<PathBuf> {
    match std::env::var_os(CHECKPOINT_ENV) {
        Some(v) if !v.is_empty() => Some(PathBuf::from(v)),
        _ => cli.map(Path::to_path_buf),
    }
}

fn respond(status: u16, body: serde_json::Value) -> Response {
    let code = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (code, Json(body)).into_response()
}

async fn call(studio: Arc<Studio>, route: Route, query: HashMap<String, String>, body: Bytes) -> Response {
    let raw = matches!(query.get("raw").map(String::as_str), Some("1" | "true"));
    let result = tokio::task::spawn_blocking(move || studio.handle(route, &body, raw)).await;
    match result {
        Ok((status, v)) => respond(status, v),
        Err(e) => {
            let err = ApiError::internal(format!("handler failed: {e}"));
            respond(err.status, err.body())
        }
    }
}

macro_rules! endpoint {
    ($route:expr) => {
        |State(s): State<Arc<Studio>>, Query(q): Query<HashMap<String, String>>, body: Bytes| call(s, $route, q, body)
    };
}

pub fn router(studio: Arc<Studio>) -> Router {
    Router::new()
        .route("/info", get(endpoint!(Route::Info)))
        .route("/generate", post(endpoint!(Route::Generate)))
        .route("/vicinity", post(endpoint!(Route::Vicinity)))
        .route("/interpolate", post(endpoint!(Route::Interpolate)))
        .route("/transfer", post(endpoint!(Route::Transfer)))
        .route("/direction/list", post(endpoint!(Route::DirectionList)).get(endpoint!(Route::DirectionList)))
        .route("/direction/fit", post(endpoint!(Route::DirectionFit)))
        .route("/direction/apply", post(endpoint!(Route::DirectionApply)))
        .fallback(|| async {
            let err = ApiError::not_found("no such endpoint");
            respond(err.status, err.body())
        })
        .with_state(studio)
}

/// Serves until ctrl-c.
pub async fn serve(studio: Arc<Studio>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(studio))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Loads the checkpoint (honouring [`CHECKPOINT_ENV`]) and serves on a
/// fresh runtime.
pub fn serve_blocking(checkpoint: Option<&Path>, addr: SocketAddr) -> Result<(), Box<dyn std::error::Error>> {
    let path = resolve_checkpoint(checkpoint).ok_or_else(|| format!("no checkpoint given and {CHECKPOINT_ENV} is unset"))?;
    let studio = Arc::new(Studio::load(&path)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(studio, addr))?;
    Ok(())
}
