//! Serves any [`Segmenter`] over the HTTP/JSON protocol.

use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use preseg::segmenter::wire::{ErrorResponse, OpenSessionRequest, OpenSessionResponse, PromptRequest, PromptResponse, PropagateResponse};
use preseg::segmenter::Segmenter;
use preseg::Error;

use crate::remote::decode_png;

type Shared = Arc<dyn Segmenter>;

struct Failure(Error);

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let status = match self.0 {
            Error::PromptInfeasible(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::BAD_REQUEST,
        };
        (status, Json(ErrorResponse::from_error(&self.0))).into_response()
    }
}

async fn blocking<R: Send + 'static>(f: impl FnOnce() -> preseg::Result<R> + Send + 'static) -> Result<R, Failure> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| Failure(Error::Protocol(format!("worker failed: {e}"))))?
        .map_err(Failure)
}

async fn open(State(seg): State<Shared>, Json(req): Json<OpenSessionRequest>) -> Result<Json<OpenSessionResponse>, Failure> {
    let h = blocking(move || {
        let frames = req.frames.iter().map(|f| decode_png(f)).collect::<preseg::Result<Vec<_>>>()?;
        seg.open_session(&frames)
    })
    .await?;
    Ok(Json(OpenSessionResponse { session_id: h.id }))
}

async fn prompt(State(seg): State<Shared>, Path(id): Path<String>, Json(req): Json<PromptRequest>) -> Result<Json<PromptResponse>, Failure> {
    let m = blocking(move || seg.add_prompt(&id, req.frame, req.object_id, &req.points)).await?;
    Ok(Json(PromptResponse { mask: m.rle }))
}

async fn propagate(State(seg): State<Shared>, Path(id): Path<String>) -> Result<Json<PropagateResponse>, Failure> {
    let masks = blocking(move || seg.propagate(&id)).await?;
    Ok(Json(PropagateResponse { masks }))
}

async fn close(State(seg): State<Shared>, Path(id): Path<String>) -> Result<StatusCode, Failure> {
    blocking(move || seg.close_session(&id)).await?;
    Ok(StatusCode::NO_CONTENT)
}

pub fn segmenter_router(seg: Shared) -> Router {
    Router::new()
        .route("/session", post(open))
        .route("/session/{id}/prompts", post(prompt))
        .route("/session/{id}/propagate", post(propagate))
        .route("/session/{id}", axum::routing::delete(close))
        .layer(axum::extract::DefaultBodyLimit::max(1 << 30))
        .with_state(seg)
}
