//! HTTP API: state snapshot, answers, and an event stream.
//!
//! - `GET /api/state`
//! - `POST /api/respond` with `{"response_label": ...}` or `{"free_text": ...}`
//! - `GET /api/events` (server-sent events, one JSON `{at, kind, payload}` per event)

use std::convert::Infallible;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::Stream;
use korra_core::engine::{StateSnapshot, UserReply};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::runtime::{EngineHandle, RespondError};

pub fn router(handle: EngineHandle) -> Router {
    Router::new()
        .route("/api/state", get(state))
        .route("/api/respond", post(respond))
        .route("/api/events", get(events))
        .with_state(handle)
}

async fn state(State(handle): State<EngineHandle>) -> Json<StateSnapshot> {
    Json(handle.state.borrow().clone())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RespondRequest {
    #[serde(default)]
    pub response_label: Option<String>,
    #[serde(default)]
    pub free_text: Option<String>,
    /// Question the answer is meant for; defaults to the one pending now.
    #[serde(default)]
    pub seq: Option<u64>,
}

fn error(status: StatusCode, message: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": message.to_string() }))).into_response()
}

async fn respond(State(handle): State<EngineHandle>, Json(req): Json<RespondRequest>) -> Response {
    let reply = match (req.response_label, req.free_text) {
        (Some(l), None) => UserReply::Label(l),
        (None, Some(t)) => UserReply::FreeText(t),
        _ => {
            return error(
                StatusCode::UNPROCESSABLE_ENTITY,
                "give exactly one of `response_label` and `free_text`",
            )
        }
    };
    let pending = handle.state.borrow().pending_question.as_ref().map(|p| p.seq);
    let Some(current) = pending else {
        return error(StatusCode::CONFLICT, RespondError::NoPendingQuestion);
    };
    let seq = req.seq.unwrap_or(current);
    if seq != current {
        return error(StatusCode::CONFLICT, RespondError::Stale { expected: current, got: seq });
    }
    match handle.respond(seq, reply).await {
        Ok(()) => Json(json!({ "accepted": true, "seq": seq })).into_response(),
        Err(e @ (RespondError::NoPendingQuestion | RespondError::Stale { .. })) => error(StatusCode::CONFLICT, e),
        Err(e @ (RespondError::UnknownLabel(_) | RespondError::FreeTextNotAccepted)) => {
            error(StatusCode::UNPROCESSABLE_ENTITY, e)
        }
        Err(e @ RespondError::EngineStopped) => error(StatusCode::SERVICE_UNAVAILABLE, e),
    }
}

async fn events(State(handle): State<EngineHandle>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = handle.events.subscribe();
    let stream = futures::stream::unfold(rx, |mut rx| async move {
        match rx.recv().await {
            Ok(e) => {
                let event = Event::default().event(e.kind_name()).data(e.to_json().to_string());
                Some((Ok(event), rx))
            }
            Err(RecvError::Lagged(n)) => {
                let event = Event::default().event("lagged").data(json!({ "missed": n }).to_string());
                Some((Ok(event), rx))
            }
            Err(RecvError::Closed) => None,
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
