//! HTTP retrieval service: seed search by upload or image id, per-session
//! undo history, and append-only pin boards.

pub mod boards;
mod engine;
mod http;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use obscura_core::corpus::CorpusError;
use thiserror::Error;

pub use engine::{
    allocation, content_hash, DatasetInfo, Engine, ResultEntry, RetrievalSet, SeedRef, HISTORY_CAPACITY,
    RESULTS_PER_SET, UPLOAD_PREFIX,
};
pub use http::{router, serve, ServeOptions};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("could not decode image: {0}")]
    UndecodableImage(String),
    #[error("unknown image `{0}`")]
    UnknownImage(String),
    #[error("unknown board `{0}`")]
    UnknownBoard(String),
    #[error("no earlier result set")]
    HistoryEmpty,
    #[error("index is not loaded")]
    IndexUnavailable,
    #[error("{0}")]
    BadRequest(String),
    #[error("board file is damaged: {0}")]
    CorruptBoard(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<obscura_core::annforest::IndexError> for ServiceError {
    fn from(e: obscura_core::annforest::IndexError) -> Self {
        ServiceError::Corpus(e.into())
    }
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UndecodableImage(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::UnknownImage(_) | ServiceError::UnknownBoard(_) => StatusCode::NOT_FOUND,
            ServiceError::HistoryEmpty => StatusCode::CONFLICT,
            ServiceError::IndexUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::CorruptBoard(_) | ServiceError::Corpus(_) | ServiceError::Io(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UndecodableImage(_) => "undecodable_image",
            ServiceError::UnknownImage(_) => "unknown_image",
            ServiceError::UnknownBoard(_) => "unknown_board",
            ServiceError::HistoryEmpty => "history_empty",
            ServiceError::IndexUnavailable => "index_unavailable",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::CorruptBoard(_) => "corrupt_board",
            ServiceError::Corpus(_) | ServiceError::Io(_) => "internal",
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        let body = serde_json::json!({ "error": self.code(), "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}
