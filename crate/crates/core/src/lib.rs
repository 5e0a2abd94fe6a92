//! Execution-guided reranking of sampled program candidates.
//!
//! The crate covers the whole batch pipeline: loading task corpora and
//! building few-shot prompts ([`dataset`]), obtaining candidates from a
//! completion endpoint or offline sample files ([`generator`]), executing
//! them against their context ([`execution`]), canonicalizing results and
//! labeling them against gold ([`repr`]), training and applying a learned
//! verifier ([`verifier`]), combining generation and verification
//! probabilities with execution-result aggregation ([`rerank`]) and
//! corpus-level reporting ([`eval`]). [`pipeline`] wires the stages
//! together behind a single configuration file.

pub mod dataset;
pub mod eval;
pub mod execution;
pub mod generator;
pub mod pipeline;
pub mod repr;
pub mod rerank;
pub mod synthetic;
pub mod verifier;

pub use dataset::{DatasetKind, ExecutionContext, TaskInstance};
pub use execution::{ExecutionLimits, ExecutionOutcome, ExecutionStatus};
pub use generator::{CandidateSet, CandidateSource, ProgramCandidate, RawSample};
pub use repr::{CanonicalResult, EquivalenceKey, ResultKind};
pub use rerank::{RankedOutput, ScoredCandidate, Strategy};
pub use verifier::{VerificationExample, VerifierModel};
