use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;
use thiserror::Error;

use sembar::agent::AgentError;
use sembar::extract::ScaleTextError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("no image with id {0}")]
    NotFound(String),
    #[error("no endpoint {0}")]
    NoRoute(String),
    #[error("image {0} has not been analyzed")]
    NotAnalyzed(String),
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("upload exceeds the {limit} byte limit")]
    TooLarge { limit: u64 },
    #[error(transparent)]
    InvalidScaleText(#[from] ScaleTextError),
    #[error("result index {index} is out of range for {len} result(s)")]
    IndexOutOfRange { index: u32, len: usize },
    #[error("{0}")]
    InvalidRequest(String),
    #[error("backend {0:?} is not configured")]
    AdapterUnavailable(String),
    #[error(transparent)]
    Agent(AgentError),
    #[error("store i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("stored record is corrupt: {0}")]
    Corrupt(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) | ServiceError::NoRoute(_) => "NotFound",
            ServiceError::NotAnalyzed(_) => "NotAnalyzed",
            ServiceError::UnsupportedFormat(_) => "UnsupportedFormat",
            ServiceError::TooLarge { .. } => "TooLarge",
            ServiceError::InvalidScaleText(_) => "InvalidScaleText",
            ServiceError::IndexOutOfRange { .. } => "IndexOutOfRange",
            ServiceError::InvalidRequest(_) => "InvalidRequest",
            ServiceError::AdapterUnavailable(_) => "AdapterUnavailable",
            ServiceError::Agent(AgentError::EndpointTimeout) => "EndpointTimeout",
            ServiceError::Agent(AgentError::MalformedReply(_)) => "MalformedReply",
            ServiceError::Agent(_) => "EndpointUnreachable",
            ServiceError::Io(_) | ServiceError::Corrupt(_) => "Internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotFound(_) | ServiceError::NoRoute(_) => StatusCode::NOT_FOUND,
            ServiceError::NotAnalyzed(_) => StatusCode::CONFLICT,
            ServiceError::UnsupportedFormat(_) => StatusCode::UNSUPPORTED_MEDIA_TYPE,
            ServiceError::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::InvalidScaleText(_) | ServiceError::IndexOutOfRange { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::AdapterUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Agent(_) => StatusCode::BAD_GATEWAY,
            ServiceError::Io(_) | ServiceError::Corrupt(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<AgentError> for ServiceError {
    fn from(e: AgentError) -> Self {
        ServiceError::Agent(e)
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            log::warn!("{}: {self}", self.code());
        }
        let body = json!({"error": {"code": self.code(), "message": self.to_string()}});
        (self.status(), Json(body)).into_response()
    }
}
