use thiserror::Error;

use crate::orbit::SatId;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl ConfigError {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PlacementError {
    #[error("selection set is empty")]
    EmptySelection,
    #[error("no placement of {k} controllers reaches every satellite at every sampled time")]
    InfeasibleInstance { k: usize },
    #[error("exhaustive search over {combinations} subsets exceeds the budget of {budget}")]
    BudgetExceeded { combinations: f64, budget: f64 },
    #[error("invalid placement problem: {0}")]
    InvalidProblem(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum AssignmentError {
    #[error("time {t} s lies outside the horizon [0, {horizon}] s")]
    OutOfHorizon { t: f64, horizon: f64 },
    #[error("invalid assignment parameters: {0}")]
    InvalidParams(String),
    #[error("no controllers supplied")]
    NoControllers,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("{sat}: illegal binding transition {from:?} -> {to:?} on control node {gs}")]
    ProtocolViolation {
        sat: SatId,
        gs: usize,
        from: Option<crate::protocol::BindingState>,
        to: crate::protocol::BindingState,
    },
    #[error("{0}: a handover is already in flight")]
    ConcurrentHandover(SatId),
    #[error("no path between {a} and {b} at t={t} s")]
    Unreachable { a: String, b: String, t: f64 },
    #[error("{sat}: handover precondition failed: {reason}")]
    Precondition { sat: SatId, reason: String },
}

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("cannot build a distribution from no values")]
    EmptyInput,
}

/// Failure of one pipeline stage.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
}

impl PipelineError {
    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        Self::Stage {
            stage,
            message: err.to_string(),
        }
    }
}
