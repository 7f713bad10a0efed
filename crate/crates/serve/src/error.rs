use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use dynedit_core::edit::EditError;
use dynedit_core::workflow::WorkflowError;

/// Body of every error response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                field: None,
            },
        }
    }

    pub fn validation(field: &str, message: impl Into<String>) -> Self {
        let mut e = Self::new(StatusCode::BAD_REQUEST, "validation", message);
        e.body.field = Some(field.into());
        e
    }

    pub fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} not found"))
    }

    pub fn no_model() -> Self {
        Self::new(StatusCode::CONFLICT, "no_model", "no model loaded")
    }

    pub fn job_in_progress() -> Self {
        Self::new(StatusCode::CONFLICT, "job_in_progress", "job in progress")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<WorkflowError> for ApiError {
    fn from(e: WorkflowError) -> Self {
        match &e {
            WorkflowError::Invalid { field, .. } => ApiError::validation(field, e.to_string()),
            WorkflowError::NoScene => ApiError::new(StatusCode::CONFLICT, "no_scene", e.to_string()),
            WorkflowError::Render(_) => ApiError::internal(e.to_string()),
        }
    }
}

impl From<EditError> for ApiError {
    fn from(e: EditError) -> Self {
        match &e {
            EditError::Invalid { field, .. } => ApiError::validation(field, e.to_string()),
            EditError::Unsupported(_) => ApiError::new(StatusCode::BAD_REQUEST, "unsupported", e.to_string()),
            EditError::NoSurface => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "no_surface", e.to_string())
            }
            EditError::Config(_) => ApiError::new(StatusCode::BAD_REQUEST, "config", e.to_string()),
            _ => ApiError::internal(e.to_string()),
        }
    }
}
