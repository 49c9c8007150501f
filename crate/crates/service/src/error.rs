use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::json;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),

    #[error("unknown session {0:?}")]
    UnknownSession(String),

    #[error("image {0} not found")]
    UnknownImage(usize),

    #[error("stale or duplicate question token")]
    StaleQuestion,

    #[error("no pending question: every attribute tree is exhausted")]
    Exhausted,

    #[error("reference not shown: image {0} was never displayed in this session")]
    NotShown(usize),

    #[error("keyword filter matches no images")]
    EmptyFilter,

    #[error("page {page} is beyond the {total} results")]
    PageOutOfRange { page: usize, total: usize },

    #[error("malformed payload: {0}")]
    BadRequest(String),

    #[error("no asset for image {0}")]
    NoAsset(usize),

    #[error("asset unavailable: {0}")]
    Asset(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Core(#[from] whittle_core::Error),
}

impl ServiceError {
    pub fn bad(reason: impl Into<String>) -> Self {
        Self::BadRequest(reason.into())
    }

    pub fn status(&self) -> StatusCode {
        match self {
            Self::UnknownDataset(_) | Self::UnknownSession(_) | Self::UnknownImage(_) | Self::NoAsset(_) => {
                StatusCode::NOT_FOUND
            }
            Self::StaleQuestion | Self::Exhausted => StatusCode::CONFLICT,
            Self::NotShown(_) | Self::EmptyFilter | Self::BadRequest(_) | Self::PageOutOfRange { .. } => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Self::Core(whittle_core::Error::UnknownImage(_) | whittle_core::Error::UnknownAttribute { .. }) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            Self::Asset(_) | Self::Internal(_) | Self::Core(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}
