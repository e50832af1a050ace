use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use terrainnav::ground::{CloudError, GroundError};
use terrainnav::img::ImageError;
use terrainnav::patch::{HeadError, PatchError};
use terrainnav::planner::PlanError;

use crate::persist::PersistError;
use crate::session::SessionError;

/// The body of every failed request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status: status.as_u16(),
            code: code.to_string(),
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn status(&self) -> StatusCode {
        StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR)
    }

    pub fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", format!("no route for {what}"))
    }

    pub fn session_not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "session-not-found", format!("no session with id {id:?}"))
            .with_details(serde_json::json!({ "id": id }))
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "malformed-payload", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({}): {}", self.code, self.status, self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(&self)).into_response()
    }
}

const UNPROCESSABLE: StatusCode = StatusCode::UNPROCESSABLE_ENTITY;

impl From<HeadError> for ApiError {
    fn from(e: HeadError) -> Self {
        match &e {
            HeadError::Empty => ApiError::new(UNPROCESSABLE, "empty-training-set", e.to_string()),
            HeadError::SingleClass { missing } => ApiError::new(UNPROCESSABLE, "single-class-training-set", e.to_string())
                .with_details(serde_json::json!({ "missing": missing })),
            _ => ApiError::new(UNPROCESSABLE, "invalid-training-set", e.to_string()),
        }
    }
}

impl From<PlanError> for ApiError {
    fn from(e: PlanError) -> Self {
        let code = match &e {
            PlanError::OutOfBounds { .. } => "out-of-bounds",
            PlanError::StartBlocked(_) => "start-blocked",
            PlanError::UnreachableGoal(_) => "unreachable-goal",
            PlanError::NoPath { .. } => "no-path",
            PlanError::Invalid(_) => "invalid-plan-request",
        };
        ApiError::new(UNPROCESSABLE, code, e.to_string())
    }
}

impl From<PatchError> for ApiError {
    fn from(e: PatchError) -> Self {
        match e {
            PatchError::Head(h) => h.into(),
            PatchError::TooSmall { .. } => ApiError::new(UNPROCESSABLE, "image-too-small", e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<ImageError> for ApiError {
    fn from(e: ImageError) -> Self {
        ApiError::new(UNPROCESSABLE, "bad-image", e.to_string())
    }
}

impl From<CloudError> for ApiError {
    fn from(e: CloudError) -> Self {
        ApiError::new(UNPROCESSABLE, "bad-point-cloud", e.to_string())
    }
}

impl From<GroundError> for ApiError {
    fn from(e: GroundError) -> Self {
        ApiError::new(UNPROCESSABLE, "ground-fit-failed", e.to_string())
    }
}

impl From<PersistError> for ApiError {
    fn from(e: PersistError) -> Self {
        match &e {
            PersistError::Integrity { hash, .. } => ApiError::new(StatusCode::CONFLICT, "integrity-error", e.to_string())
                .with_details(serde_json::json!({ "hash": hash })),
            PersistError::Missing(_) => ApiError::new(StatusCode::NOT_FOUND, "saved-session-not-found", e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let conflict = |code: &str, e: &SessionError| ApiError::new(StatusCode::CONFLICT, code, e.to_string());
        match e {
            SessionError::NoFrame => conflict("no-frame", &e),
            SessionError::NoModel => conflict("no-model", &e),
            SessionError::NoCloud => conflict("no-point-cloud", &e),
            SessionError::Busy => conflict("training-in-progress", &e),
            SessionError::Config(_) => ApiError::new(UNPROCESSABLE, "invalid-config", e.to_string()),
            SessionError::Head(h) => h.into(),
            SessionError::Patch(p) => p.into(),
            SessionError::Plan(p) => p.into(),
            SessionError::Ground(g) => g.into(),
            SessionError::Image(i) => i.into(),
            SessionError::Cloud(c) => c.into(),
            SessionError::Frame(m) => ApiError::new(UNPROCESSABLE, "bad-frame", m),
            SessionError::Costmap(c) => ApiError::internal(c.to_string()),
        }
    }
}
