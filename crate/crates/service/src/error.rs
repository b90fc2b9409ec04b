use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session {0} is no longer active")]
    SessionClosed(String),
    #[error("no question is pending; fetch the next question first")]
    NoPendingQuestion,
    #[error("question {got} is not the pending question {expected}")]
    OutOfOrder { expected: String, got: String },
    #[error("invalid response: {0}")]
    InvalidValue(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("corrupt event log: {0}")]
    CorruptLog(String),
    #[error(transparent)]
    Core(#[from] survey_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ServiceError {
    /// Stable machine-readable code used in JSON error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Self::UnknownSession(_) => "unknown_session",
            Self::SessionClosed(_) => "session_closed",
            Self::NoPendingQuestion => "no_pending_question",
            Self::OutOfOrder { .. } => "out_of_order",
            Self::InvalidValue(_) => "invalid_value",
            Self::InvalidRequest(_) => "invalid_request",
            Self::Core(survey_core::Error::StrategyModelMismatch { .. }) => "strategy_model_mismatch",
            Self::Core(survey_core::Error::UnknownCovariate(_)) => "unknown_covariate",
            Self::Core(survey_core::Error::InvalidArgument(_)) => "invalid_request",
            Self::CorruptLog(_) | Self::Core(_) | Self::Io(_) | Self::Json(_) => "internal",
        }
    }
}

pub type Result<T> = std::result::Result<T, ServiceError>;
