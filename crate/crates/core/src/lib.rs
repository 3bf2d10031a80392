//! Allocation-only core of the DMBA (Dual-Metric Bias Assessment) harness.
//!
//! Everything here is a pure function over in-memory values: dataset
//! validation and stratified sampling, stimulus construction, agreement
//! parsing, TF-IDF completion classification, metric aggregation and run
//! planning. File formats, HTTP and checkpoint IO live in the `dmba` crate.
//!
//! The crate is `no_std` and needs only `alloc`.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod corpus;
pub mod digest;
pub mod metrics;
pub mod plan;
pub mod prompting;
pub mod request;
pub mod rng;
pub mod scoring;

pub use corpus::{BiasType, CorpusError, Dataset, LvaReport, LvaVerdict, SentencePair, Verdict};
pub use metrics::{CompletionResult, MetricSummary, PairResult, RecordKey};
pub use plan::{Batch, PlannedRequest, RunPlan};
pub use prompting::{PromptTemplate, Stimulus, StimulusKind, Variant};
pub use request::{DecodingConfig, FinishReason, GenerationRequest, GenerationResponse, RequestId, RetryPolicy};
pub use scoring::{AgreementScore, CompletionLabel, Label, SimilarityPair};
