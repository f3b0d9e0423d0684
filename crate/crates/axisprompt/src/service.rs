//! Annotation HTTP service.
//!
//! | method | path | |
//! |---|---|---|
//! | GET | `/api/health` | status, version, validation rules |
//! | GET | `/api/images` | `[{id, width, height, has_annotation}]` |
//! | GET | `/api/images/{id}` | the PNG |
//! | POST | `/api/preview` | draft → PNG with the axes drawn |
//! | POST | `/api/annotations` | draft (+ `base_version`) → saved record |
//! | GET | `/api/annotations/{id}` | latest saved record |
//!
//! Image ids are paths below the image root without `.png` and may contain
//! slashes. The UI bundle (if given) is served at `/`.

use std::future::Future;
use std::path::PathBuf;

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use crate::annotate::{validation_rules, AnnotationDraft, AnnotationStore, StoreError};

const FALLBACK_INDEX: &str = "<!doctype html>
<html><head><meta charset=\"utf-8\"><title>annotator</title></head>
<body><p>The annotator UI bundle is not installed. Start the service with <code>--ui &lt;dir&gt;</code> to serve it.
The JSON API is available under <code>/api/</code>.</p></body></html>
";

#[derive(Clone)]
struct AppState {
    store: AnnotationStore,
}

#[derive(Debug, Deserialize)]
struct SaveRequest {
    #[serde(flatten)]
    draft: AnnotationDraft,
    #[serde(default)]
    base_version: Option<u32>,
}

fn error_json(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(serde_json::json!({ "error": msg.into() }))).into_response()
}

impl IntoResponse for StoreError {
    fn into_response(self) -> Response {
        match self {
            StoreError::UnknownImage(id) => error_json(StatusCode::NOT_FOUND, format!("unknown image {id:?}")),
            StoreError::Invalid(errors) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                Json(serde_json::json!({ "error": "invalid draft", "fields": errors })),
            )
                .into_response(),
            StoreError::Conflict { current, expected } => (
                StatusCode::CONFLICT,
                Json(serde_json::json!({ "error": "annotation was changed concurrently", "current_version": current, "base_version": expected })),
            )
                .into_response(),
            StoreError::Io(e) => error_json(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
            StoreError::Overlay(e) => error_json(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()),
        }
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, StoreError> + Send + 'static) -> Result<T, Response> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(IntoResponse::into_response),
        Err(e) => Err(error_json(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "validation": validation_rules(),
    }))
}

async fn list_images(State(st): State<AppState>) -> Response {
    match blocking(move || st.store.list()).await {
        Ok(list) => Json(list).into_response(),
        Err(r) => r,
    }
}

async fn get_image(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let r = blocking(move || {
        let p = st.store.image_path(&id)?;
        std::fs::read(&p).map_err(|e| StoreError::Io(crate::io::IoError::fs(&p, e)))
    })
    .await;
    match r {
        Ok(bytes) => ([(header::CONTENT_TYPE, "image/png")], bytes).into_response(),
        Err(r) => r,
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, Response> {
    serde_json::from_slice(body).map_err(|e| {
        (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(serde_json::json!({ "error": "malformed draft", "fields": [{ "field": "body", "message": e.to_string() }] })),
        )
            .into_response()
    })
}

async fn preview(State(st): State<AppState>, body: axum::body::Bytes) -> Response {
    let draft: AnnotationDraft = match parse_body(&body) {
        Ok(d) => d,
        Err(r) => return r,
    };
    match blocking(move || st.store.preview(&draft)).await {
        Ok(png) => ([(header::CONTENT_TYPE, "image/png")], png).into_response(),
        Err(r) => r,
    }
}

async fn save(State(st): State<AppState>, body: axum::body::Bytes) -> Response {
    let req: SaveRequest = match parse_body(&body) {
        Ok(d) => d,
        Err(r) => return r,
    };
    match blocking(move || st.store.save(&req.draft, req.base_version)).await {
        Ok(rec) => Json(serde_json::json!({ "id": rec.draft.image, "version": rec.version, "record": rec })).into_response(),
        Err(r) => r,
    }
}

async fn get_annotation(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let key = id.clone();
    match blocking(move || st.store.latest(&key)).await {
        Ok(Some(rec)) => Json(rec).into_response(),
        Ok(None) => error_json(StatusCode::NOT_FOUND, format!("no annotation for {id:?}")),
        Err(r) => r,
    }
}

pub fn router(images: PathBuf, ui: Option<PathBuf>) -> Router {
    let state = AppState {
        store: AnnotationStore::new(images),
    };
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/images", get(list_images))
        .route("/api/images/{*id}", get(get_image))
        .route("/api/preview", post(preview))
        .route("/api/annotations", post(save))
        .route("/api/annotations/{*id}", get(get_annotation))
        .with_state(state);
    match ui {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(|| async { Html(FALLBACK_INDEX) })),
    }
}

/// Serves until `shutdown` resolves; in-flight requests (including pending
/// annotation writes) complete before this returns.
pub async fn serve(listener: TcpListener, images: PathBuf, ui: Option<PathBuf>, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(images, ui)).with_graceful_shutdown(shutdown).await
}

/// Resolves on Ctrl-C or SIGTERM.
pub async fn shutdown_signal() {
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
}
