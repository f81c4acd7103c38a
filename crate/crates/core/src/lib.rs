//! Benchmark harness for measuring how well text-to-image systems represent
//! culturally specific artifacts.
//!
//! The crate is organised along the pipeline stages:
//!
//! - [`dataset`]: the supercategory → category → artifact hierarchy and its
//!   region metadata.
//! - [`crawler`]: harvests candidate artifacts from MediaWiki "by country"
//!   category trees.
//! - [`prompts`]: generation and evaluation prompt templates.
//! - [`genpipe`]: seeded image generation over pluggable backends.
//! - [`embed`]: image/text embedding with an on-disk cache, plus the set-level
//!   cosine similarity every scorer builds on.
//! - [`scorers`]: perceptual-similarity, image-text alignment and diversity
//!   scorers, and the multimodal-judge prompt/parse pair.
//! - [`gold`]: human Likert judgments and ranking agreement.
//! - [`analysis`]: Spearman correlation tables, grouped aggregation, benchmark
//!   reports and caption-corpus concept frequencies.
//! - [`pipeline`]: the stage runner used by the CLI.

pub mod analysis;
pub mod crawler;
pub mod dataset;
pub mod embed;
pub mod genpipe;
pub mod gold;
pub mod pipeline;
pub mod prompts;
pub mod ratelimit;
pub mod regions;
pub mod scorers;
pub mod store;

pub use dataset::{ArtifactRecord, Dataset, GlobalBucket};
pub use embed::{EmbeddingSet, SimilarityMode};
pub use prompts::PromptStyle;
pub use scorers::ScoreRecord;
