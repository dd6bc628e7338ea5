use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use rationing::session::{ProtocolError, SpecError};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no session {0}")]
    UnknownSession(String),
    #[error("roster size must be even and at least 2, got {0}")]
    Roster(usize),
    #[error("invalid mechanism settings: {0}")]
    Spec(#[from] SpecError),
    #[error("subject {0} is outside the roster")]
    NoSuchSubject(usize),
    #[error("seat of subject {0} is already taken")]
    SeatOccupied(usize),
    #[error("every seat is taken")]
    Full,
    #[error("unknown join token")]
    UnknownToken,
    #[error("session is {0}")]
    WrongStatus(&'static str),
    #[error("{0} seats are still empty")]
    Unfilled(usize),
    #[error("subject {0} is not playing in this period")]
    NotSeated(usize),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("session task stopped")]
    Gone,
    #[error("storage: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad request: {0}")]
    BadRequest(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::Roster(_) | ServiceError::Spec(_) | ServiceError::NoSuchSubject(_) | ServiceError::BadRequest(_) => {
                StatusCode::BAD_REQUEST
            }
            ServiceError::SeatOccupied(_) | ServiceError::Full | ServiceError::WrongStatus(_) | ServiceError::Unfilled(_) => {
                StatusCode::CONFLICT
            }
            ServiceError::UnknownToken => StatusCode::FORBIDDEN,
            ServiceError::NotSeated(_) | ServiceError::Protocol(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Gone | ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Short machine-readable name.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::Roster(_) => "roster",
            ServiceError::Spec(_) => "spec",
            ServiceError::NoSuchSubject(_) => "no_such_subject",
            ServiceError::SeatOccupied(_) => "seat_occupied",
            ServiceError::Full => "full",
            ServiceError::UnknownToken => "unknown_token",
            ServiceError::WrongStatus(_) => "wrong_status",
            ServiceError::Unfilled(_) => "unfilled",
            ServiceError::NotSeated(_) => "not_seated",
            ServiceError::Protocol(p) => match p {
                ProtocolError::OutOfTurn { .. } => "out_of_turn",
                ProtocolError::OutOfRange { .. } => "out_of_range",
                ProtocolError::DuplicateFinalization(_) => "duplicate_finalization",
                ProtocolError::DuplicateChoice { .. } => "duplicate_choice",
                ProtocolError::OutsideWindow { .. } => "outside_window",
                _ => "protocol",
            },
            ServiceError::Gone => "gone",
            ServiceError::Io(_) => "io",
            ServiceError::BadRequest(_) => "bad_request",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "error": self.code(), "message": self.to_string() }));
        (self.status(), body).into_response()
    }
}
