//! HTTP JSON API over a [`Store`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use super::{AnnotationError, Store, SubmitOutcome};
use crate::dataset::{EntityOverrides, Quality};

pub const ANNOTATION_PORT_ENV: &str = "R2T_ANNOTATION_PORT";
pub const DEFAULT_PORT: u16 = 8765;

impl AnnotationError {
    fn status(&self) -> StatusCode {
        match self {
            AnnotationError::UnknownSession(_) | AnnotationError::UnknownRecord(_) => StatusCode::NOT_FOUND,
            AnnotationError::OutOfOrder { .. } | AnnotationError::SessionComplete(_) => StatusCode::CONFLICT,
            AnnotationError::PoolEmpty { .. } => StatusCode::SERVICE_UNAVAILABLE,
            AnnotationError::InvalidCategory(_) => StatusCode::BAD_REQUEST,
            AnnotationError::Storage { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            AnnotationError::PoolEmpty { .. } => "PoolEmpty",
            AnnotationError::UnknownSession(_) => "UnknownSession",
            AnnotationError::OutOfOrder { .. } => "OutOfOrder",
            AnnotationError::SessionComplete(_) => "SessionComplete",
            AnnotationError::UnknownRecord(_) => "UnknownRecord",
            AnnotationError::InvalidCategory(_) => "InvalidCategory",
            AnnotationError::Storage { .. } => "Storage",
        }
    }
}

impl IntoResponse for AnnotationError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.kind(), "message": self.to_string()});
        (self.status(), Json(body)).into_response()
    }
}

type Shared = Arc<Store>;

#[derive(Deserialize)]
struct CreateSession {
    annotator_id: String,
    #[serde(default)]
    n: Option<usize>,
}

#[derive(Deserialize)]
struct Submit {
    triple_id: String,
    text: String,
    #[serde(default)]
    overrides: Option<EntityOverrides>,
}

#[derive(Deserialize)]
struct Report {
    triple_id: String,
}

#[derive(Deserialize)]
struct Review {
    record_id: String,
    quality: Quality,
}

async fn create_session(State(store): State<Shared>, Json(req): Json<CreateSession>) -> Response {
    let r = match req.n {
        Some(n) => store.create_session_sized(&req.annotator_id, n),
        None => store.create_session(&req.annotator_id),
    };
    match r {
        Ok(s) => (StatusCode::CREATED, Json(s)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn next(State(store): State<Shared>, Path(id): Path<String>) -> Response {
    match store.next_task(&id) {
        Ok(t) => Json(t).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn submit(State(store): State<Shared>, Path(id): Path<String>, Json(req): Json<Submit>) -> Response {
    match store.submit(&id, &req.triple_id, &req.text, req.overrides) {
        Ok(outcome @ SubmitOutcome::Accepted { .. }) => Json(outcome).into_response(),
        Ok(outcome @ SubmitOutcome::Rejected { .. }) => (StatusCode::UNPROCESSABLE_ENTITY, Json(outcome)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn report(State(store): State<Shared>, Path(id): Path<String>, Json(req): Json<Report>) -> Response {
    match store.report_noisy(&id, &req.triple_id) {
        Ok(s) => Json(s).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn review(State(store): State<Shared>, Json(req): Json<Review>) -> Response {
    match store.review(&req.record_id, req.quality) {
        Ok(r) => Json(r).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn export(State(store): State<Shared>) -> Response {
    let mut body = String::new();
    for e in store.export() {
        body.push_str(&serde_json::to_string(&e).expect("examples serialize"));
        body.push('\n');
    }
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response()
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/submit", post(submit))
        .route("/sessions/{id}/report", post(report))
        .route("/review", post(review))
        .route("/export", get(export))
        .with_state(store)
}

/// Serves until the process is stopped.
pub async fn serve(store: Arc<Store>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}
