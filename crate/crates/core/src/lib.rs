//! Attributed long-form answer generation.
//!
//! Answers are produced as interleaved reference/claim pairs, where every
//! reference is a run of sentences copied verbatim from the retrieved
//! passages and every claim is substantiated by the reference before it.
//!
//! The crate is split along the pipeline:
//!
//! - [`answer`]: the tagged answer format, parsing and rendering.
//! - [`textproc`] and [`tokenizer`]: sentence segmentation, normalization
//!   and the tokenizer contract.
//! - [`passage`]: passages and their sentence inventory.
//! - [`trie`]: the token-level prefix tree used for constrained decoding.
//! - [`backends`]: generation, entailment and segmentation model roles,
//!   with HTTP clients and deterministic mocks.
//! - [`genpipe`]: prompt, unified and interleaved generation.
//! - [`dataset`]: training-data construction and citation filtering.
//! - [`eval`]: attribution and correctness metrics.
//!
//! Metrics and dataset statistics are generic over the scalar type (see
//! [`scalar::Scalar`]); the aliases below fix the common choices.

pub mod answer;
pub mod backends;
pub mod dataset;
pub mod eval;
pub mod genpipe;
pub mod passage;
pub mod scalar;
pub mod textproc;
pub mod tokenizer;
pub mod trie;

pub use answer::{AttributedAnswer, GenMode, GenerationTrace, RefClaimPair};
pub use passage::{Passage, PassageSet, Question, SentenceRef};
pub use scalar::Scalar;

/// Exact rational scores, used where metric fixtures must match to the last digit.
pub type Exact = num_rational::Ratio<i64>;

/// Metrics report with floating-point ratios.
pub type MetricsReport = eval::MetricsReport<f64>;
/// Metrics report with exact rational ratios.
pub type ExactMetricsReport = eval::MetricsReport<Exact>;
/// Per-example metrics with floating-point ratios.
pub type ExampleMetrics = eval::ExampleMetrics<f64>;

/// Dataset statistics with floating-point averages.
pub type DatasetStats = dataset::DatasetStats<f64>;
/// Dataset statistics with exact rational averages.
pub type ExactDatasetStats = dataset::DatasetStats<Exact>;
