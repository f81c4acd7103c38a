//! Vendi score over category-prompt seeds.
//!
//! Each of the `m` category-prompt seeds is first labelled with its nearest
//! artifact of the category (by set cosine similarity). A unit-diagonal PSD
//! kernel is then built over the seeds and
//! `VS = exp(-Σ λ_i log λ_i)` with `λ` the eigenvalues of `K / m`.
//! `1 ≤ VS ≤ m`; the normalised variant divides by `m`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::embed::{cosine_set_similarity, EmbeddingSet, SimilarityMode};

use super::ScoreError;

/// Eigenvalues of `K / m` below this are a PSD violation; values in
/// `[-PSD_TOLERANCE, 0)` are clipped to zero.
pub const PSD_TOLERANCE: f64 = 1e-8;

/// Which similarity the kernel measures between two seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VendiKernel {
    /// Cosine between the seeds' own embeddings (no assignment step).
    Embedding,
    /// Cosine between the centroid embeddings of the artifacts the two seeds
    /// were assigned to.
    #[default]
    AssignedArtifact,
    /// 1 when the assigned artifacts share a region, else 0.
    AssignedRegion,
    /// 1 when the assigned artifacts share a continent, else 0.
    AssignedContinent,
}

/// One artifact of the category being scored.
#[derive(Debug, Clone, Copy)]
pub struct VendiArtifact<'a> {
    pub name: &'a str,
    pub region: &'a str,
    pub continent: &'a str,
    pub images: &'a EmbeddingSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VendiResult {
    pub vs: f64,
    /// `vs / m`, in (0, 1].
    pub normalized: f64,
    /// `mean quality × vs`, when quality scores were supplied.
    pub qvs: Option<f64>,
    pub seeds: usize,
    /// Assigned artifact per seed (empty for the plain embedding kernel).
    pub assignments: Vec<String>,
}

/// Vendi score of a kernel with unit diagonal.
pub fn vendi_score(kernel: &DMatrix<f64>) -> Result<f64, ScoreError> {
    let m = kernel.nrows();
    if m == 0 || kernel.ncols() != m {
        return Err(ScoreError::InsufficientItems { needed: 1, got: m });
    }
    let scaled = kernel / m as f64;
    let eig = SymmetricEigen::new(scaled);
    let mut entropy = 0.0;
    for &l in eig.eigenvalues.iter() {
        if l < -PSD_TOLERANCE {
            return Err(ScoreError::NonPsdKernel(l));
        }
        if l > 0.0 {
            entropy -= l * l.ln();
        }
    }
    Ok(entropy.exp())
}

/// Index of the nearest artifact for every seed of `category_images`.
pub fn assign_nearest(
    category_images: &EmbeddingSet,
    artifacts: &[VendiArtifact<'_>],
    mode: SimilarityMode,
) -> Result<Vec<usize>, ScoreError> {
    if artifacts.is_empty() {
        return Err(ScoreError::MissingComponent("artifact embedding sets".into()));
    }
    let mut out = Vec::with_capacity(category_images.len());
    for j in 0..category_images.len() {
        let seed = category_images.single(j);
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, a) in artifacts.iter().enumerate() {
            let s = cosine_set_similarity(&seed, a.images, mode)?;
            // ties keep the first artifact
            if s > best.0 {
                best = (s, i);
            }
        }
        out.push(best.1);
    }
    Ok(out)
}

fn unit_centroid(set: &EmbeddingSet) -> Result<Vec<f64>, ScoreError> {
    let m = set.mean();
    let n = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-12 {
        return Err(ScoreError::Invalid(format!(
            "centroid of {} is zero",
            set.key.artifact
        )));
    }
    Ok(m.into_iter().map(|x| x / n).collect())
}

/// Builds the seed × seed kernel.
pub fn build_kernel(
    category_images: &EmbeddingSet,
    artifacts: &[VendiArtifact<'_>],
    kernel: VendiKernel,
    mode: SimilarityMode,
) -> Result<(DMatrix<f64>, Vec<String>), ScoreError> {
    let m = category_images.len();
    if m == 0 {
        return Err(ScoreError::NoSeeds(category_images.key.artifact.clone()));
    }
    if kernel == VendiKernel::Embedding {
        // renormalise in f64 so identical rows give exactly rank one
        let rows: Vec<Vec<f64>> = category_images
            .rows()
            .map(|r| {
                let n = r.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
                r.iter().map(|&x| f64::from(x) / n).collect()
            })
            .collect();
        let k = DMatrix::from_fn(m, m, |i, j| {
            if i == j {
                return 1.0;
            }
            let d: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
            d.clamp(-1.0, 1.0)
        });
        return Ok((k, Vec::new()));
    }
    let assigned = assign_nearest(category_images, artifacts, mode)?;
    let names = assigned.iter().map(|&i| artifacts[i].name.to_string()).collect();
    let k = match kernel {
        VendiKernel::AssignedArtifact => {
            let centroids = artifacts
                .iter()
                .map(|a| unit_centroid(a.images))
                .collect::<Result<Vec<_>, _>>()?;
            DMatrix::from_fn(m, m, |i, j| {
                let (a, b) = (assigned[i], assigned[j]);
                if a == b {
                    1.0
                } else {
                    centroids[a].iter().zip(&centroids[b]).map(|(x, y)| x * y).sum()
                }
            })
        }
        VendiKernel::AssignedRegion | VendiKernel::AssignedContinent => {
            let attr = |i: usize| {
                let a = &artifacts[assigned[i]];
                if kernel == VendiKernel::AssignedRegion {
                    a.region
                } else {
                    a.continent
                }
            };
            DMatrix::from_fn(m, m, |i, j| if attr(i) == attr(j) { 1.0 } else { 0.0 })
        }
        VendiKernel::Embedding => unreachable!(),
    };
    Ok((k, names))
}

/// Vendi (and optionally quality-weighted Vendi) score of a category.
/// `qualities`, when given, holds one quality value per category seed.
pub fn score_vendi(
    category_images: &EmbeddingSet,
    artifacts: &[VendiArtifact<'_>],
    kernel: VendiKernel,
    mode: SimilarityMode,
    qualities: Option<&[f64]>,
) -> Result<VendiResult, ScoreError> {
    let (k, assignments) = build_kernel(category_images, artifacts, kernel, mode)?;
    let m = k.nrows();
    let vs = vendi_score(&k)?;
    let qvs = match qualities {
        None => None,
        Some(q) if q.len() != m => {
            return Err(ScoreError::Invalid(format!(
                "{} quality values for {m} seeds",
                q.len()
            )))
        }
        Some(q) => Some(q.iter().sum::<f64>() / m as f64 * vs),
    };
    Ok(VendiResult {
        vs,
        normalized: vs / m as f64,
        qvs,
        seeds: m,
        assignments,
    })
}

/// Per-item quality (e.g. a human-preference reward model).
pub trait QualityFunction<T: ?Sized>: Send + Sync {
    fn id(&self) -> &str;
    fn quality(&self, item: &T) -> f64;
}

/// Constant quality; with the default 1.0, qVS equals VS.
#[derive(Debug, Clone, Copy)]
pub struct ConstantQuality(pub f64);

impl Default for ConstantQuality {
    fn default() -> Self {
        ConstantQuality(1.0)
    }
}

impl<T: ?Sized> QualityFunction<T> for ConstantQuality {
    fn id(&self) -> &str {
        "constant"
    }

    fn quality(&self, _: &T) -> f64 {
        self.0
    }
}
