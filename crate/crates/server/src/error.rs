use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use esp_core::engine::EngineError;
use esp_core::store::StoreError;
use esp_core::workbook::WorkbookError;
use serde_json::{json, Value};

/// The uniform error envelope `{code, message, details}`.
#[derive(Debug, Clone)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    pub details: Value,
}

impl ApiError {
    pub fn new(code: &str, message: impl Into<String>) -> ApiError {
        ApiError {
            code: code.to_string(),
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn auth(message: &str) -> ApiError {
        ApiError::new("AUTH", message)
    }

    pub fn bad_request(message: impl Into<String>) -> ApiError {
        ApiError::new("BAD_REQUEST", message)
    }

    pub fn status(&self) -> StatusCode {
        status_for(&self.code)
    }
}

pub fn status_for(code: &str) -> StatusCode {
    match code {
        "AUTH" => StatusCode::UNAUTHORIZED,
        "FORBIDDEN" => StatusCode::FORBIDDEN,
        "NOT_FOUND" => StatusCode::NOT_FOUND,
        "VALIDATION" => StatusCode::UNPROCESSABLE_ENTITY,
        "DUPLICATE" | "IMMUTABLE" | "NOT_TESTED" | "NO_TESTS" | "NO_LIVE_VERSION" | "NOT_READY"
        | "FAILED_JOB" => StatusCode::CONFLICT,
        "CORRUPT" | "INTERNAL" => StatusCode::INTERNAL_SERVER_ERROR,
        _ => StatusCode::BAD_REQUEST,
    }
}

fn workbook_details(e: &WorkbookError) -> Value {
    match e {
        WorkbookError::Parse { cell, pos, .. } => json!({"cell": cell.to_string(), "pos": pos}),
        _ => Value::Null,
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let details = match &e {
            StoreError::Workbook(w) => workbook_details(w),
            _ => Value::Null,
        };
        ApiError {
            code: e.code().to_string(),
            message: e.to_string(),
            details,
        }
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let details = match &e {
            EngineError::Store(s) => ApiError::from(s.clone()).details,
            _ => e.details(),
        };
        ApiError {
            code: e.code().to_string(),
            message: e.to_string(),
            details,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"code": self.code, "message": self.message, "details": self.details});
        (self.status(), Json(body)).into_response()
    }
}
