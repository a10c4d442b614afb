//! Criteria-driven reformatting of instruction datasets.
//!
//! The pipeline classifies each record into one of 46 tasks, optionally
//! grounds knowledge-intensive tasks in retrieved evidence, rewrites the
//! response to the task's format through a completion gateway, and then
//! runs post-processing filters that fall back to the original response
//! whenever the rewrite degraded it. Companion modules provide edit-rate
//! analytics, mix sampling, and evaluation harnesses.
//!
//! All network access goes through [`gateway`], which records exchanges in
//! a content-addressed replay cache; a sealed cache makes every run fully
//! offline and byte-deterministic.

pub mod analytics;
pub mod corpus;
pub mod evalsuite;
pub mod gateway;
pub mod numeric;
pub mod pipeline;
pub mod postprocess;
pub mod reformat;
pub mod retrieval;
pub mod taxonomy;

pub use corpus::{Dataset, InstructionRecord};
pub use gateway::{CompletionService, DecodingParams, Gateway, GatewayConfig, SearchService};
pub use pipeline::{run_realign, PipelineOptions, RealignRun};
pub use reformat::{RewriteMode, RewriteOutcome};
pub use taxonomy::CriteriaRegistry;
