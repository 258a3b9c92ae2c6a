//! Claim revision toolkit.
//!
//! The crate covers the whole loop around rewriting argumentative claims:
//!
//! - [`corpus`]: revision-history ingestion, pair derivation, intent filtering
//!   and reproducible splits.
//! - [`genkit`]: diverse candidate generation behind a pluggable [`genkit::Generator`].
//! - [`scoring`]: fluency / meaning / argument scorers, the weighted
//!   [`scoring::autoscore`] and grid-search weight calibration.
//! - [`selection`]: the selection strategies, including a pairwise linear ranker.
//! - [`metrics`]: BLEU, ROUGE-L, SARI, exact match, no-edit and context similarity.
//! - [`evalstats`]: MACE aggregation, agreement coefficients, Wilcoxon tests and rank statistics.
//!
//! Neural models are out of scope; every model-backed component is a trait with a
//! deterministic reference implementation so the pipeline can run end to end.

pub mod adapter;
pub mod corpus;
pub mod embed;
pub mod evalstats;
pub mod genkit;
pub mod metrics;
pub mod scoring;
pub mod selection;
pub mod synthetic;
pub mod text;

pub use corpus::{
    Claim, ContextBundle, DatasetSplit, IntentLabel, OptimizationPair, OptimizationType,
    RevisionChain,
};
pub use genkit::{Candidate, CandidateSet, Directive, GenerationConfig, SamplingSchedule};
pub use scoring::{ScoreVector, Weights};
pub use selection::{SelectionResult, Strategy};
