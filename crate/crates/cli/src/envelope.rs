use axum::http::StatusCode;
use serde::Serialize;
use serde_json::{json, Value as Json};

/// Machine-readable error: code, human message, offending field path.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub field: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>, field: Option<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                code: code.into(),
                message: message.into(),
                field,
            },
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message, None)
    }
}

impl From<riskxai::Error> for ApiError {
    fn from(e: riskxai::Error) -> Self {
        use riskxai::Error as E;
        let status = match &e {
            E::UnknownRecord(_) => StatusCode::NOT_FOUND,
            E::Precondition(_) => StatusCode::CONFLICT,
            E::Io { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError {
            status,
            body: ErrorBody {
                code: e.code().to_string(),
                message: e.to_string(),
                field: e.field(),
            },
        }
    }
}

/// The envelope printed by the CLI and returned by the service.
pub fn error_envelope(e: &riskxai::Error) -> Json {
    json!({ "error": { "code": e.code(), "message": e.to_string(), "field": e.field() } })
}
