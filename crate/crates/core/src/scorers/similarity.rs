//! Perceptual-similarity and image-text alignment scorers.

use crate::embed::{
    cosine_set_similarity, image_text_similarity, EmbedError, EmbeddingSet, SimilarityMode,
    TextEmbedding,
};

use super::ScoreError;

/// Offset added to divergence scores so they sit on the same scale as the
/// similarity scores they are derived from. Rank correlations are unaffected.
pub const DIVERGENCE_OFFSET: f64 = 0.5;

fn nonempty(set: &EmbeddingSet) -> Result<(), ScoreError> {
    if set.is_empty() {
        Err(ScoreError::NoSeeds(format!(
            "{}/{}/{}",
            set.key.system_id, set.key.artifact, set.key.style
        )))
    } else {
        Ok(())
    }
}

/// Similarity of generated images to the ground-truth image set.
pub fn phi_gt(
    generated: &EmbeddingSet,
    ground_truth: &EmbeddingSet,
    mode: SimilarityMode,
) -> Result<f64, ScoreError> {
    nonempty(generated)?;
    if ground_truth.is_empty() {
        return Err(ScoreError::MissingComponent(format!(
            "ground-truth embeddings for {}",
            ground_truth.key.artifact
        )));
    }
    Ok(cosine_set_similarity(generated, ground_truth, mode)?)
}

/// Similarity of generated images to images generated from the category-only
/// prompt. Needs no ground truth.
pub fn phi_ps(
    generated: &EmbeddingSet,
    category_images: &EmbeddingSet,
    mode: SimilarityMode,
) -> Result<f64, ScoreError> {
    nonempty(generated)?;
    if category_images.is_empty() {
        return Err(ScoreError::MissingComponent(format!(
            "category-prompt embeddings for {}",
            category_images.key.artifact
        )));
    }
    Ok(cosine_set_similarity(generated, category_images, mode)?)
}

/// `0.5 + phi_ps(subset) - phi_ps(n)`.
pub fn ps_divergence(phi_ps_subset: f64, phi_ps_name: f64) -> f64 {
    DIVERGENCE_OFFSET + phi_ps_subset - phi_ps_name
}

/// Mean of the name-prompt and attribute-prompt alignments of the
/// name-prompt images.
pub fn phi_ita(
    images_n: &EmbeddingSet,
    prompt_n: &TextEmbedding,
    prompt_a: &TextEmbedding,
    mode: SimilarityMode,
) -> Result<f64, ScoreError> {
    nonempty(images_n)?;
    if prompt_n.vlm_id != prompt_a.vlm_id {
        return Err(EmbedError::SpaceMismatch(prompt_n.vlm_id.clone(), prompt_a.vlm_id.clone()).into());
    }
    let with_name = image_text_similarity(images_n, prompt_n, mode)?;
    let with_attr = image_text_similarity(images_n, prompt_a, mode)?;
    Ok((with_name + with_attr) / 2.0)
}

/// Single-prompt alignment `sim(I(n), P(style))`, as used by prior
/// image-text scorers.
pub fn ita_baseline(
    images_n: &EmbeddingSet,
    prompt: &TextEmbedding,
    mode: SimilarityMode,
) -> Result<f64, ScoreError> {
    nonempty(images_n)?;
    Ok(image_text_similarity(images_n, prompt, mode)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::EmbeddingKey;

    fn set(rows: &[Vec<f32>], enc: &str) -> EmbeddingSet {
        EmbeddingSet::from_rows(EmbeddingKey::new("s", "a", "N", enc), rows).unwrap()
    }

    fn text(v: Vec<f32>, vlm: &str) -> TextEmbedding {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        TextEmbedding {
            vlm_id: vlm.into(),
            vector: v.into_iter().map(|x| x / n).collect(),
        }
    }

    #[test]
    fn identical_sets_score_one() {
        let a = set(&[vec![0.3, 0.4], vec![0.3, 0.4]], "e");
        assert!((phi_gt(&a, &a, SimilarityMode::SetMeanPairwise).unwrap() - 1.0).abs() < 1e-6);
        assert!((phi_ps(&a, &a, SimilarityMode::SetMeanPairwise).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn divergence_arithmetic() {
        assert_eq!(ps_divergence(0.7, 0.7), 0.5);
        assert!((ps_divergence(0.6, 0.8) - 0.3).abs() < 1e-12);
        assert!((ps_divergence(0.78, 0.49) - 0.79).abs() < 1e-12);
    }

    #[test]
    fn ita_mean_and_symmetry() {
        let imgs = set(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]], "clip");
        let pn = text(vec![1.0, 1.0, 0.0], "clip");
        let pa = text(vec![0.0, 0.0, 1.0], "clip");
        let m = SimilarityMode::SetMeanPairwise;
        let v = phi_ita(&imgs, &pn, &pa, m).unwrap();
        let expected = (std::f64::consts::FRAC_1_SQRT_2 + 0.0) / 2.0;
        assert!((v - expected).abs() < 1e-6);
        assert!((phi_ita(&imgs, &pa, &pn, m).unwrap() - v).abs() < 1e-15);
        // equal terms -> that term
        assert!((phi_ita(&imgs, &pn, &pn, m).unwrap() - ita_baseline(&imgs, &pn, m).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn ita_rejects_mismatched_spaces() {
        let imgs = set(&[vec![1.0, 0.0]], "clip");
        let pn = text(vec![1.0, 0.0], "clip");
        let pa = text(vec![1.0, 0.0], "siglip");
        assert!(phi_ita(&imgs, &pn, &pa, SimilarityMode::SetMeanPairwise).is_err());
        let imgs = set(&[vec![1.0, 0.0]], "siglip");
        assert!(phi_ita(&imgs, &pn, &pn, SimilarityMode::SetMeanPairwise).is_err());
    }

    #[test]
    fn all_refused_is_no_seeds() {
        let empty = EmbeddingSet::empty(EmbeddingKey::new("s", "a", "N", "e"), 2);
        let g = set(&[vec![1.0, 0.0]], "e");
        assert!(matches!(
            phi_gt(&empty, &g, SimilarityMode::SetMeanPairwise),
            Err(ScoreError::NoSeeds(_))
        ));
        assert!(matches!(
            phi_ps(&g, &empty, SimilarityMode::SetMeanPairwise),
            Err(ScoreError::MissingComponent(_))
        ));
    }
}
