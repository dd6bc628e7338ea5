use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use rationing::session::{to_jsonl, AgentInput, StateFrame};
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use crate::actor::Subscription;
use crate::error::ServiceError;
use crate::hub::Hub;
use crate::wire::{Ack, AttachBot, CreateSession, JoinRequest, JoinTicket, OutcomeRow, ServerMessage, SessionDescriptor, Submit};

pub fn router(hub: Hub) -> Router {
    Router::new()
        .route("/sessions", post(create).get(list))
        .route("/sessions/{id}", get(describe))
        .route("/sessions/{id}/join", post(join))
        .route("/sessions/{id}/bots", post(attach_bot))
        .route("/sessions/{id}/start", post(start))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/submit", post(submit))
        .route("/sessions/{id}/replay", get(replay))
        .route("/sessions/{id}/outcomes", get(outcomes))
        .route("/sessions/{id}/stream", get(stream))
        .with_state(hub)
}

#[derive(Debug, Deserialize)]
struct TokenQuery {
    token: String,
}

async fn create(State(hub): State<Hub>, Json(req): Json<CreateSession>) -> Result<Json<SessionDescriptor>, ServiceError> {
    hub.create_session(&req).map(Json)
}

async fn list(State(hub): State<Hub>) -> Json<Vec<SessionDescriptor>> {
    Json(hub.list())
}

async fn describe(State(hub): State<Hub>, Path(id): Path<String>) -> Result<Json<SessionDescriptor>, ServiceError> {
    hub.descriptor(&id).map(Json)
}

async fn join(
    State(hub): State<Hub>,
    Path(id): Path<String>,
    body: Option<Json<JoinRequest>>,
) -> Result<Json<JoinTicket>, ServiceError> {
    let subject = body.and_then(|Json(b)| b.subject);
    hub.join(&id, subject).await.map(Json)
}

async fn attach_bot(
    State(hub): State<Hub>,
    Path(id): Path<String>,
    Json(req): Json<AttachBot>,
) -> Result<Json<SessionDescriptor>, ServiceError> {
    hub.attach_bot(&id, req.subject, req.policy).await?;
    hub.descriptor(&id).map(Json)
}

async fn start(State(hub): State<Hub>, Path(id): Path<String>) -> Result<Json<SessionDescriptor>, ServiceError> {
    hub.start(&id).await?;
    hub.descriptor(&id).map(Json)
}

async fn state(
    State(hub): State<Hub>,
    Path(id): Path<String>,
    Query(q): Query<TokenQuery>,
) -> Result<Json<Option<StateFrame>>, ServiceError> {
    hub.frame(&id, &q.token).await.map(Json)
}

async fn submit(State(hub): State<Hub>, Path(id): Path<String>, Json(req): Json<Submit>) -> Result<Json<Ack>, ServiceError> {
    hub.submit(&id, &req.token, req.input).await.map(Json)
}

async fn replay(State(hub): State<Hub>, Path(id): Path<String>) -> Result<Response, ServiceError> {
    let log = hub.log(&id).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], to_jsonl(&log)).into_response())
}

async fn outcomes(State(hub): State<Hub>, Path(id): Path<String>) -> Result<Json<Vec<OutcomeRow>>, ServiceError> {
    hub.outcomes(&id).await.map(Json)
}

async fn stream(
    ws: WebSocketUpgrade,
    State(hub): State<Hub>,
    Path(id): Path<String>,
    Query(q): Query<TokenQuery>,
) -> Result<Response, ServiceError> {
    let sub = hub.subscribe(&id, &q.token).await?;
    Ok(ws.on_upgrade(move |socket| pump(socket, hub, id, q.token, sub)))
}

fn encode(m: &ServerMessage) -> Message {
    Message::Text(serde_json::to_string(m).expect("messages serialize").into())
}

fn rejection(e: &ServiceError) -> ServerMessage {
    ServerMessage::Rejected {
        error: e.code().to_string(),
        message: e.to_string(),
    }
}

/// Forwards this participant's share of every write and carries their
/// actions back to the session.
async fn pump(socket: WebSocket, hub: Hub, id: String, token: String, sub: Subscription) {
    let (mut sink, mut incoming) = socket.split();
    let subject = sub.subject;
    let mut rx = sub.rx;
    for m in &sub.snapshot {
        if sink.send(encode(m)).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            fanout = rx.recv() => match fanout {
                Ok(f) => {
                    for m in &f.per_subject[subject] {
                        if sink.send(encode(m)).await.is_err() {
                            return;
                        }
                    }
                }
                Err(RecvError::Lagged(missed)) => {
                    tracing::warn!(session = %id, subject, missed, "stream lagged, resending snapshot");
                    match hub.subscribe(&id, &token).await {
                        Ok(fresh) => {
                            rx = fresh.rx;
                            for m in &fresh.snapshot {
                                if sink.send(encode(m)).await.is_err() {
                                    return;
                                }
                            }
                        }
                        Err(_) => return,
                    }
                }
                Err(RecvError::Closed) => return,
            },
            msg = incoming.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let result = match serde_json::from_str::<AgentInput>(&text) {
                        Ok(input) => hub.submit(&id, &token, input).await.map(|_| ()),
                        Err(e) => Err(ServiceError::BadRequest(e.to_string())),
                    };
                    if let Err(e) = result {
                        if sink.send(encode(&rejection(&e))).await.is_err() {
                            return;
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
