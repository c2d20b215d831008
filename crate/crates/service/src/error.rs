use std::fmt;

use serde::{Deserialize, Serialize};
use trialflow_core::flow::FlowError;
use trialflow_core::inference::InferenceError;
use trialflow_core::session::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    NotFound,
    Denied,
    WrongStatus,
    Invalid,
}

/// Error returned by every store and API operation. A denial carries the
/// state machine's reason verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub struct ApiError {
    pub code: ErrorCode,
    pub reason: String,
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.code, self.reason)
    }
}

impl ApiError {
    pub fn not_found(reason: impl Into<String>) -> Self {
        Self { code: ErrorCode::NotFound, reason: reason.into() }
    }

    pub fn denied(reason: impl Into<String>) -> Self {
        Self { code: ErrorCode::Denied, reason: reason.into() }
    }

    pub fn wrong_status(reason: impl Into<String>) -> Self {
        Self { code: ErrorCode::WrongStatus, reason: reason.into() }
    }

    pub fn invalid(reason: impl Into<String>) -> Self {
        Self { code: ErrorCode::Invalid, reason: reason.into() }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::WrongStatus { .. } => ApiError::wrong_status(e.to_string()),
            SessionError::UnknownCohort(_) | SessionError::Flow(FlowError::UnknownCohort(_)) => {
                ApiError::not_found(e.to_string())
            }
            _ => ApiError::invalid(e.to_string()),
        }
    }
}

impl From<InferenceError> for ApiError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::PendingPriors(_) | InferenceError::NotConverged => ApiError::wrong_status(e.to_string()),
            _ => ApiError::invalid(e.to_string()),
        }
    }
}
