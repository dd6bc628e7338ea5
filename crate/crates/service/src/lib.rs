//! Live session server: lobby, per-session single-writer actors, 10 Hz
//! bot play, visibility-filtered participant streams and JSONL persistence.
mod actor;
mod error;
mod http;
mod hub;
mod store;
mod wire;

pub use actor::{Fanout, Subscription};
pub use error::ServiceError;
pub use http::router;
pub use hub::{Hub, HubConfig};
pub use store::{log_path, session_dir, write_atomic};
pub use wire::{
    Ack, AttachBot, CreateSession, JoinRequest, JoinTicket, Occupant, OutcomeRow, RosterEntry, ServerMessage,
    SessionDescriptor, SessionStatus, Submit,
};

/// Serves the hub on `bind` until the process is stopped.
pub async fn serve(hub: Hub, bind: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(bind).await?;
    tracing::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(hub)).await
}
