use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use flipfeed_core::taskflow::TaskFlowError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Error body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: Value,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { code: code.into(), message: message.into(), details: json!({}) } }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.body.details = details;
        self
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn unauthorized() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or invalid bearer token")
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

impl From<TaskFlowError> for ApiError {
    fn from(e: TaskFlowError) -> Self {
        let message = e.to_string();
        match e {
            TaskFlowError::UnknownPack(_) => ApiError::new(StatusCode::NOT_FOUND, "unknown_pack", message),
            TaskFlowError::EmptyPack(_) => ApiError::new(StatusCode::CONFLICT, "empty_pack", message),
            TaskFlowError::InvalidStudentId(_) => ApiError::bad_request(message),
            TaskFlowError::UnknownSession(_) => ApiError::not_found(message),
            TaskFlowError::SessionComplete(_) => ApiError::new(StatusCode::CONFLICT, "session_complete", message),
            TaskFlowError::OutOfOrder { required, actual } => ApiError::new(StatusCode::CONFLICT, "out_of_order", message)
                .with_details(json!({"required": required, "actual": actual})),
            TaskFlowError::InvalidSubmission(field) => {
                ApiError::new(StatusCode::BAD_REQUEST, "invalid_submission", message)
                    .with_details(json!({"field": field.0}))
            }
            TaskFlowError::EmptyFeedback => ApiError::new(StatusCode::BAD_REQUEST, "empty_feedback", message),
            ref other if other.is_retryable() => {
                ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "execution_unavailable", message)
                    .with_details(json!({"retryable": true}))
            }
            _ => ApiError::internal(message),
        }
    }
}
