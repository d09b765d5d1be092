//! Extraction of dataset-documentation dimensions (uses, contributors,
//! distribution, composition, gathering, annotation, social concerns) from
//! raw documentation text.
//!
//! The pipeline has three stages:
//!
//! 1. [`ingest`] splits the text into passages, renders tables as text and
//!    picks the vocabulary used to tune queries.
//! 2. [`chain`] runs declarative prompt chains (retrieval-augmented
//!    in-context questions, answer refinement, classification, parsing) over
//!    a [`retrieval::VectorIndex`] and a [`gateway::Gateway`]; [`dimensions`]
//!    ships one chain per dimension and maps its outputs to records.
//! 3. [`completeness`] turns records into a coverage report.
//!
//! [`eval`] aggregates human verdicts on extraction outputs.

pub mod chain;
pub mod completeness;
pub mod config;
pub mod digest;
pub mod dimensions;
pub mod eval;
pub mod gateway;
pub mod ingest;
pub mod retrieval;









pub use chain::{ChainResult, ChainSpec, PromptCatalog, StepKind, StepOutput, StepSpec, StepStatus};
pub use completeness::{assess, CompletenessReport, CoverageClassifier, CoverageMode};
pub use config::PipelineConfig;
pub use dimensions::{extract_all, extract_dimension, CategoryLists, Dimension, DimensionRecord};
pub use gateway::{BackendError, CompletionRequest, Gateway};
pub use ingest::{build_document, Document, Passage, PreparedDocument, RawInput};
pub use retrieval::{top_k, VectorIndex};
