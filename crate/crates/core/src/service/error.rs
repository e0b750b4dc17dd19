use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};

use crate::agency::{AgencyError, SessionStatus};
use crate::memory::MalformedValue;

/// Error body of every endpoint: `{code, message, detail}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    pub fn unknown_session(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session `{id}`"))
            .with_detail(json!({ "session": id }))
    }

    pub fn unknown_pack(pack: &str) -> Self {
        ApiError::new(
            StatusCode::NOT_FOUND,
            "unknown_domain_pack",
            format!("no installed domain pack `{pack}`"),
        )
        .with_detail(json!({ "pack": pack }))
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<MalformedValue> for ApiError {
    fn from(e: MalformedValue) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_value", e.to_string())
            .with_detail(json!({ "value": e.0 }))
    }
}

impl From<AgencyError> for ApiError {
    fn from(e: AgencyError) -> Self {
        let message = e.to_string();
        let (status, code, detail) = match &e {
            AgencyError::UnknownSign(sign) => (
                StatusCode::UNPROCESSABLE_ENTITY,
                "unknown_sign",
                json!({ "sign": sign }),
            ),
            AgencyError::InvalidValue { sign, value, kind } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                "invalid_value",
                json!({ "sign": sign, "value": value, "kind": kind }),
            ),
            AgencyError::UnknownProposal(id) => {
                (StatusCode::CONFLICT, "unknown_proposal", json!({ "proposal_id": id }))
            }
            AgencyError::SessionClosed(SessionStatus::Completed) => {
                (StatusCode::CONFLICT, "session_completed", Value::Null)
            }
            AgencyError::SessionClosed(_) => (StatusCode::CONFLICT, "session_failed", Value::Null),
            AgencyError::AlreadyStarted | AgencyError::NotStarted => {
                (StatusCode::CONFLICT, "session_state", Value::Null)
            }
            AgencyError::Journal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "journal", Value::Null),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal", Value::Null),
        };
        ApiError {
            status,
            code,
            message,
            detail,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "code": self.code, "message": self.message, "detail": self.detail });
        (self.status, Json(body)).into_response()
    }
}
