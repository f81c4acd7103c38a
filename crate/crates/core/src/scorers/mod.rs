//! Quantitative scorers.
//!
//! Perceptual similarity (`phi_gt`, `phi_ps`, the divergence variant),
//! image-text alignment (`phi_ita` and single-prompt baselines), diversity
//! (`phi_div`, LPIPS-style aggregates, Vendi / quality-weighted Vendi, and the
//! diversity divergence), plus prompt construction and response parsing for a
//! multimodal LLM judge.
//!
//! The scoring functions here are pure over embedding sets, image lists and
//! already-computed component scores. [`context::ScoreContext`] wraps them with
//! cache lookups and produces [`ScoreRecord`]s.

pub mod context;
pub mod diversity;
pub mod mllm;
pub mod records;
pub mod similarity;
pub mod vendi;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::EmbedError;

pub use diversity::{
    div_divergence, lpips_category, pairwise_mean_dissimilarity, phi_div, Dissimilarity,
    PixelL1, PooledDiversity,
};
pub use similarity::{ita_baseline, phi_gt, phi_ita, phi_ps, ps_divergence, DIVERGENCE_OFFSET};
pub use vendi::{vendi_score, VendiKernel, VendiResult};

/// One scorer output for one (system, artifact).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub scorer_id: String,
    pub system_id: String,
    pub artifact: String,
    /// Prompt style or attribute subset the score conditions on, if any.
    #[serde(default)]
    pub style: String,
    /// Encoder, VLM or dissimilarity backend the score was computed with.
    pub encoder_or_vlm: String,
    pub value: f64,
    pub seeds_used: usize,
    #[serde(default)]
    pub adapter_version: String,
}

impl ScoreRecord {
    /// `scorer_id@encoder`, the row label used by correlation tables.
    pub fn variant(&self) -> String {
        if self.encoder_or_vlm.is_empty() {
            self.scorer_id.clone()
        } else {
            format!("{}@{}", self.scorer_id, self.encoder_or_vlm)
        }
    }
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("no usable seeds for {0} (all refused or skipped)")]
    NoSeeds(String),
    #[error("missing component: {0}")]
    MissingComponent(String),
    #[error("need at least {needed} items, got {got}")]
    InsufficientItems { needed: usize, got: usize },
    #[error("kernel is not positive semidefinite (eigenvalue {0:e})")]
    NonPsdKernel(f64),
    #[error("non-finite score for {0}")]
    NonFinite(String),
    #[error("{0}")]
    Invalid(String),
}
