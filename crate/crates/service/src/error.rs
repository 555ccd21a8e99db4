use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use glucotwin_core::counterfactual::CounterfactualError;
use glucotwin_core::eval::EvalError;
use glucotwin_core::ingest::IngestError;
use glucotwin_core::twin::Violation;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::workspace::WorkspaceError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    ValidationFailed,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::ValidationFailed => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            details: Value::Null,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = details;
        self
    }

    /// 422 carrying one entry per offending scenario.
    pub fn violations(per_scenario: Vec<(String, Vec<Violation>)>) -> Self {
        let details = per_scenario
            .iter()
            .map(|(label, vs)| {
                json!({
                    "scenario": label,
                    "violations": vs.iter().map(|v| json!({
                        "variable": v.variable,
                        "value": v.value,
                        "kind": v.kind,
                        "bound": v.bound,
                        "message": v.to_string(),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect::<Vec<_>>();
        let labels: Vec<&str> = per_scenario.iter().map(|(l, _)| l.as_str()).collect();
        Self::new(
            ErrorCode::ValidationFailed,
            format!("infeasible action in scenario(s): {}", labels.join(", ")),
        )
        .with_details(Value::Array(details))
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let details = match &e {
            IngestError::Xml { offset, .. } => json!({ "byte_offset": offset }),
            IngestError::Record { line, .. } => json!({ "line": line }),
            _ => Value::Null,
        };
        ApiError::bad_request(e.to_string()).with_details(details)
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Model(_) => ApiError::new(ErrorCode::ValidationFailed, e.to_string()),
            _ => ApiError::bad_request(e.to_string()),
        }
    }
}

impl From<CounterfactualError> for ApiError {
    fn from(e: CounterfactualError) -> Self {
        match e {
            CounterfactualError::InfeasibleAction(vs) => ApiError::violations(vec![(String::new(), vs)]),
            CounterfactualError::CalibrationFailed {
                best_residual,
                ref params,
            } => ApiError::new(ErrorCode::ValidationFailed, e.to_string())
                .with_details(json!({ "best_residual": best_residual, "best_params": params })),
            CounterfactualError::AnchorOutsideWindow { .. }
            | CounterfactualError::WindowNotOnGrid
            | CounterfactualError::NoScenarios
            | CounterfactualError::InvalidParams(_)
            | CounterfactualError::InvalidScenario(_)
            | CounterfactualError::InvalidWeights(_)
            | CounterfactualError::InvalidTargets(_)
            | CounterfactualError::Parse { .. } => ApiError::bad_request(e.to_string()),
        }
    }
}

impl From<WorkspaceError> for ApiError {
    fn from(e: WorkspaceError) -> Self {
        match e {
            WorkspaceError::NotFound { .. } => ApiError::not_found(e.to_string()),
            WorkspaceError::Ingest(inner) => inner.into(),
            WorkspaceError::Eval(inner) => inner.into(),
            WorkspaceError::WrongKind { .. } => ApiError::bad_request(e.to_string()),
            WorkspaceError::Io(_) | WorkspaceError::Json(_) => ApiError::internal(e.to_string()),
        }
    }
}
