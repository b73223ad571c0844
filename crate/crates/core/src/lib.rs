//! Rationale-guided counterfactual data augmentation for multi-hop fact
//! verification.
//!
//! The pipeline explains each instance (sentence and token rationales),
//! edits causal entities in the evidence, generates entity-constrained
//! claims with lexically constrained beam search, checks label flips with a
//! verifier and keeps the candidate with the best semantic plus entity
//! fidelity. [`pipeline::run_pipeline`] wires the stages together.

pub mod backends;
pub mod checking;
pub mod editor;
pub mod error;
pub mod evaluator;
pub mod explainer;
pub mod filtering;
pub mod generator;
pub mod model;
pub mod nei;
pub mod pipeline;
pub mod scalar;
pub mod seed;
pub mod text;
pub mod transport;

pub use error::{BackendError, ValidationError};
pub use model::{
    validate_instance, CounterfactualRecord, Entity, EntitySet, EntityType, EvidenceItem,
    Instance, Label, Rationales, RecordKind,
};
pub use scalar::Scalar;

/// The pipeline runs in `f64`; these name the concrete instantiations.
pub type Fidelity = filtering::FidelityScores<f64>;
pub type Candidate = filtering::ScoredCandidate<f64>;
pub type Plan = transport::TransportPlan<f64>;
