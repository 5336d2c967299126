use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use chromaprop::ErrorKind;
use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("palette entry {entry} out of range for k = {k}")]
    EntryOutOfRange { entry: usize, k: usize },
    #[error("image has {pixels} pixels, limit is {limit}")]
    TooLarge { pixels: usize, limit: usize },
    #[error("{0}")]
    Numerical(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    /// Pipeline errors on session creation: inconsistent sizes are 422,
    /// other bad input 400.
    pub fn from_upload(e: chromaprop::Error) -> Self {
        match e.kind() {
            ErrorKind::Dimension => ServiceError::Unprocessable(e.to_string()),
            ErrorKind::Data => ServiceError::BadRequest(e.to_string()),
            ErrorKind::Numerical => ServiceError::Numerical(e.to_string()),
        }
    }

    /// Pipeline errors on edit: any input problem is a bad stroke set.
    pub fn from_edit(e: chromaprop::Error) -> Self {
        match e.kind() {
            ErrorKind::Numerical => ServiceError::Numerical(e.to_string()),
            _ => ServiceError::BadRequest(e.to_string()),
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ServiceError::EntryOutOfRange { .. } => StatusCode::RANGE_NOT_SATISFIABLE,
            ServiceError::TooLarge { .. } => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::Numerical(_) | ServiceError::Config(_) | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            log::error!("{self}");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}
