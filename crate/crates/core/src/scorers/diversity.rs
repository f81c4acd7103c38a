//! Pairwise-dissimilarity diversity scorers.
//!
//! `phi_div` pools the images generated for the four benchmark styles and
//! averages the dissimilarity over every unordered pair; with `k` seeds per
//! style that is `C(4k, 2)` pairs. LPIPS-style baselines use the same pairwise
//! mean over the name-prompt seeds only.

use image::imageops::{self, FilterType};
use image::RgbImage;

use super::ScoreError;

/// Dissimilarity backend (LPIPS or a stand-in). Must satisfy `d(x, x) = 0`.
pub trait Dissimilarity<T: ?Sized>: Send + Sync {
    fn id(&self) -> &str;
    /// Persisted with every score; perceptual backbones differ in scale.
    fn version(&self) -> String;
    fn distance(&self, a: &T, b: &T) -> f64;
}

/// Result of a pairwise mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PooledDiversity {
    pub value: f64,
    pub pairs: usize,
    pub items: usize,
}

/// Mean of `d` over all unordered pairs of `items`.
pub fn pairwise_mean_dissimilarity<T, D>(items: &[&T], d: &D) -> Result<PooledDiversity, ScoreError>
where
    T: ?Sized,
    D: Dissimilarity<T> + ?Sized,
{
    let n = items.len();
    if n < 2 {
        return Err(ScoreError::InsufficientItems { needed: 2, got: n });
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            total += d.distance(items[i], items[j]);
            pairs += 1;
        }
    }
    let value = total / pairs as f64;
    if !value.is_finite() {
        return Err(ScoreError::NonFinite(d.id().to_string()));
    }
    Ok(PooledDiversity {
        value,
        pairs,
        items: n,
    })
}

/// Diversity of the pooled per-style image sets (refused seeds already
/// excluded by the caller).
pub fn phi_div<T, D>(per_style: &[Vec<&T>], d: &D) -> Result<PooledDiversity, ScoreError>
where
    T: ?Sized,
    D: Dissimilarity<T> + ?Sized,
{
    let pooled: Vec<&T> = per_style.iter().flatten().copied().collect();
    pairwise_mean_dissimilarity(&pooled, d)
}

/// Category aggregate: mean of the member artifacts' intra-artifact scores.
pub fn lpips_category(member_scores: &[f64]) -> Result<f64, ScoreError> {
    if member_scores.is_empty() {
        return Err(ScoreError::InsufficientItems { needed: 1, got: 0 });
    }
    Ok(member_scores.iter().sum::<f64>() / member_scores.len() as f64)
}

/// `phi_div - lpips(n)`.
pub fn div_divergence(phi_div: f64, lpips_n: f64) -> f64 {
    phi_div - lpips_n
}

/// Mean absolute per-channel pixel difference in [0, 1]. A cheap stand-in for
/// a learned perceptual metric; images of different size are compared after
/// resizing the second to the first.
#[derive(Debug, Clone, Default)]
pub struct PixelL1;

impl Dissimilarity<RgbImage> for PixelL1 {
    fn id(&self) -> &str {
        "pixel-l1"
    }

    fn version(&self) -> String {
        "pixel-l1/1".to_string()
    }

    fn distance(&self, a: &RgbImage, b: &RgbImage) -> f64 {
        let resized;
        let b = if a.dimensions() == b.dimensions() {
            b
        } else {
            resized = imageops::resize(b, a.width(), a.height(), FilterType::Triangle);
            &resized
        };
        let total: u64 = a
            .as_raw()
            .iter()
            .zip(b.as_raw())
            .map(|(&x, &y)| u64::from(x.abs_diff(y)))
            .sum();
        total as f64 / (a.as_raw().len().max(1) as f64 * 255.0)
    }
}

/// `1 - cos(a, b)` on embedding rows, in [0, 2].
#[derive(Debug, Clone, Default)]
pub struct CosineDistance;

impl Dissimilarity<[f32]> for CosineDistance {
    fn id(&self) -> &str {
        "cosine-distance"
    }

    fn version(&self) -> String {
        "cosine-distance/1".to_string()
    }

    fn distance(&self, a: &[f32], b: &[f32]) -> f64 {
        let (mut d, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
        for (&x, &y) in a.iter().zip(b) {
            d += f64::from(x) * f64::from(y);
            na += f64::from(x) * f64::from(x);
            nb += f64::from(y) * f64::from(y);
        }
        if na == 0.0 || nb == 0.0 {
            return 1.0;
        }
        (1.0 - d / (na.sqrt() * nb.sqrt())).max(0.0)
    }
}
