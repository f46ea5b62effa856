//! The shared registry: validated publication, composite-ranked semantic
//! search and record lifecycle.

mod embed;
mod record;
mod registry;
mod validate;

use thiserror::Error;

use crate::distill::DistillError;

pub use embed::{cosine, embed_text, tokenize, DIM};
pub use record::{
    lifecycle_transition, record_id, EndpointHealth, Lifecycle, LifecycleEvent, SkillRecord, VerificationStatus,
};
pub use registry::{
    score_record, Components, PublishOutcome, Registry, RegistryEvent, ScoredResult, ScoringWeights,
    DEPRECATED_PENALTY,
};
pub use validate::{validate_for_publish, validate_live, LiveCheck, ValidationReport, MIN_LIVE_SUCCESS_RATE};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("validation failed: {}", .0.join("; "))]
    ValidationFailed(Vec<String>),
    #[error("no searchable records")]
    EmptyIndex,
    #[error("no record {0}")]
    NotFound(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Merge(#[from] DistillError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Format(#[from] serde_json::Error),
}
