use std::net::SocketAddr;
use std::path::PathBuf;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use healthchat_core::artifacts::ArtifactError;
use healthchat_core::chat::ChatError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Startup failures.
#[derive(Debug, Error)]
pub enum ServerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot load engine: {0}")]
    Startup(#[source] ArtifactError),
    #[error("session store: {0}")]
    Sessions(#[from] ChatError),
    #[error("cannot serve on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
}

impl ServerError {
    /// True for file-system and network failures.
    pub fn is_io(&self) -> bool {
        match self {
            ServerError::Io { .. } | ServerError::Bind { .. } | ServerError::Sessions(_) => true,
            ServerError::Startup(e) => e.is_io(),
            ServerError::Config(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

/// A request failure rendered as `{code, message}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
            },
        }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<ChatError> for ApiError {
    fn from(e: ChatError) -> Self {
        let (status, code) = match &e {
            ChatError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            ChatError::Busy(_) => (StatusCode::CONFLICT, "busy"),
            ChatError::NoQuery | ChatError::NoExchange => (StatusCode::CONFLICT, "no_exchange"),
            ChatError::EmptyQuery
            | ChatError::EmptySelection
            | ChatError::SelectionTooLong { .. }
            | ChatError::UnknownTopic { .. } => (StatusCode::BAD_REQUEST, "invalid_request"),
            ChatError::Llm(_) | ChatError::EmptyReply | ChatError::Followup(_) => {
                (StatusCode::BAD_GATEWAY, "llm_error")
            }
            ChatError::Retrieval(_) | ChatError::Example(_) | ChatError::Persistence { .. } => {
                (StatusCode::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}
