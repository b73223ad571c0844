use thiserror::Error;

use crate::text::Span;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("instance {id}: evidence list is empty")]
    EmptyEvidence { id: String },
    #[error("instance {id}: evidence item {index} has empty text")]
    EmptyEvidenceText { id: String, index: usize },
    #[error("instance {id}: claim is empty")]
    EmptyClaim { id: String },
    #[error("unknown label {0:?} (expected SUP, REF or NEI)")]
    BadLabel(String),
    #[error("instance {id}: rationale shape mismatch ({evidence} evidence items, mask {mask}, spans {spans})")]
    RationaleShape {
        id: String,
        evidence: usize,
        mask: usize,
        spans: usize,
    },
    #[error("instance {id}: token span {span:?} out of bounds in evidence {evidence}")]
    SpanOutOfBounds { id: String, evidence: usize, span: Span },
    #[error("instance {id}: token spans in evidence {evidence} overlap or are unsorted")]
    SpansUnordered { id: String, evidence: usize },
    #[error("instance {id}: evidence {evidence} owns token spans but is not masked")]
    UnmaskedSpans { id: String, evidence: usize },
}

/// Failures raised by model backends.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("backend endpoint {endpoint} unavailable after {attempts} attempt(s): {message}")]
    Unavailable {
        endpoint: String,
        attempts: u32,
        message: String,
    },
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("invalid backend input: {0}")]
    InvalidInput(String),
}
