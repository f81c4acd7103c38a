//! Cache-backed scoring: resolves embedding sets and generated images for one
//! system and turns the pure scorers into [`ScoreRecord`]s.

use std::collections::BTreeMap;

use image::RgbImage;

use crate::dataset::{ArtifactRecord, Dataset};
use crate::embed::{embed_text, EmbeddingCache, EmbeddingKey, EmbeddingSet, SimilarityMode, VisionLanguageModel};
use crate::genpipe::{GeneratedImageSet, ImageStore};
use crate::prompts::{PromptStyle, TemplateRegistry};

use super::diversity::{lpips_category, pairwise_mean_dissimilarity, phi_div, Dissimilarity};
use super::similarity::{ita_baseline, phi_gt, phi_ita, phi_ps, ps_divergence};
use super::vendi::{score_vendi, QualityFunction, VendiArtifact, VendiKernel, VendiResult};
use super::{ScoreError, ScoreRecord};

/// Scorer identifiers written into [`ScoreRecord::scorer_id`].
pub mod ids {
    pub const PHI_GT: &str = "phi_gt";
    pub const PHI_PS: &str = "phi_ps";
    pub const DPHI_PS: &str = "dphi_ps";
    pub const PHI_ITA: &str = "phi_ita";
    pub const ITA: &str = "ita";
    pub const PHI_DIV: &str = "phi_div";
    pub const LPIPS_N: &str = "lpips_n";
    pub const LPIPS_C: &str = "lpips_c";
    pub const DPHI_DIV: &str = "dphi_div";
    pub const VS: &str = "vs";
    pub const VS_NORM: &str = "vs_norm";
    pub const QVS: &str = "qvs";
}

/// Pseudo-system under which ground-truth embeddings are cached.
pub const GT_SYSTEM: &str = "_gt";
/// Style label of ground-truth embedding sets.
pub const GT_STYLE: &str = "GT";

/// Label used for category-prompt image sets in the image store and cache.
pub fn category_label(category: &str) -> String {
    format!("category:{category}")
}

pub fn gt_key(artifact: &str, encoder: &str) -> EmbeddingKey {
    EmbeddingKey::new(GT_SYSTEM, artifact, GT_STYLE, encoder)
}

pub fn generated_key(system: &str, artifact: &str, style: PromptStyle, encoder: &str) -> EmbeddingKey {
    EmbeddingKey::new(system, artifact, style.as_str(), encoder)
}

pub fn category_key(system: &str, category: &str, encoder: &str) -> EmbeddingKey {
    EmbeddingKey::new(system, &category_label(category), PromptStyle::C.as_str(), encoder)
}

/// Scoring view of one system's cached outputs.
pub struct ScoreContext<'a> {
    system_id: String,
    dataset: &'a Dataset,
    cache: &'a EmbeddingCache,
    store: Option<&'a ImageStore>,
    generated: BTreeMap<(String, PromptStyle), &'a GeneratedImageSet>,
    templates: &'a TemplateRegistry,
    mode: SimilarityMode,
}

impl<'a> ScoreContext<'a> {
    pub fn new(system_id: &str, dataset: &'a Dataset, cache: &'a EmbeddingCache) -> Self {
        ScoreContext {
            system_id: system_id.to_string(),
            dataset,
            cache,
            store: None,
            generated: BTreeMap::new(),
            templates: TemplateRegistry::builtin(),
            mode: SimilarityMode::default(),
        }
    }

    /// Makes image-level scorers available. Sets of other systems are ignored.
    pub fn with_images(mut self, store: &'a ImageStore, sets: &'a [GeneratedImageSet]) -> Self {
        self.store = Some(store);
        for s in sets.iter().filter(|s| s.system_id == self.system_id) {
            self.generated.insert((s.artifact.clone(), s.style), s);
        }
        self
    }

    pub fn with_mode(mut self, mode: SimilarityMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_templates(mut self, templates: &'a TemplateRegistry) -> Self {
        self.templates = templates;
        self
    }

    pub fn system_id(&self) -> &str {
        &self.system_id
    }

    fn artifact(&self, name: &str) -> Result<&'a ArtifactRecord, ScoreError> {
        self.dataset
            .get(name)
            .ok_or_else(|| ScoreError::Invalid(format!("unknown artifact `{name}`")))
    }

    fn set(&self, key: &EmbeddingKey) -> Result<EmbeddingSet, ScoreError> {
        self.cache
            .load(key)
            .ok_or_else(|| ScoreError::MissingComponent(format!("embeddings {}", key.rel_path())))
    }

    fn version(&self, key: &EmbeddingKey) -> String {
        self.cache
            .entry(&key.rel_path())
            .map(|e| e.encoder_version)
            .unwrap_or_default()
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        scorer: &str,
        artifact: &str,
        style: &str,
        backend: &str,
        value: f64,
        seeds_used: usize,
        version: String,
    ) -> Result<ScoreRecord, ScoreError> {
        if !value.is_finite() {
            return Err(ScoreError::NonFinite(format!("{scorer} {artifact}")));
        }
        if seeds_used == 0 {
            return Err(ScoreError::NoSeeds(format!("{}/{artifact}/{style}", self.system_id)));
        }
        Ok(ScoreRecord {
            scorer_id: scorer.to_string(),
            system_id: self.system_id.clone(),
            artifact: artifact.to_string(),
            style: style.to_string(),
            encoder_or_vlm: backend.to_string(),
            value,
            seeds_used,
            adapter_version: version,
        })
    }

    pub fn score_gt(&self, artifact: &str, style: PromptStyle, encoder: &str) -> Result<ScoreRecord, ScoreError> {
        self.artifact(artifact)?;
        let key = generated_key(&self.system_id, artifact, style, encoder);
        let generated = self.set(&key)?;
        let gt = self.set(&gt_key(artifact, encoder))?;
        let v = phi_gt(&generated, &gt, self.mode)?;
        self.record(ids::PHI_GT, artifact, style.as_str(), encoder, v, generated.len(), self.version(&key))
    }

    fn raw_ps(&self, a: &ArtifactRecord, style: PromptStyle, encoder: &str) -> Result<(f64, usize, String), ScoreError> {
        let key = generated_key(&self.system_id, &a.name, style, encoder);
        let generated = self.set(&key)?;
        let category = self.set(&category_key(&self.system_id, &a.category, encoder))?;
        Ok((phi_ps(&generated, &category, self.mode)?, generated.len(), self.version(&key)))
    }

    pub fn score_ps(&self, artifact: &str, style: PromptStyle, encoder: &str) -> Result<ScoreRecord, ScoreError> {
        let a = self.artifact(artifact)?;
        let (v, seeds, version) = self.raw_ps(a, style, encoder)?;
        self.record(ids::PHI_PS, artifact, style.as_str(), encoder, v, seeds, version)
    }

    /// `0.5 + phi_ps(subset) - phi_ps(N)`; `subset` is `NC` or `NCR`.
    pub fn score_ps_divergence(&self, artifact: &str, subset: PromptStyle, encoder: &str) -> Result<ScoreRecord, ScoreError> {
        if !matches!(subset, PromptStyle::NC | PromptStyle::NCR) {
            return Err(ScoreError::Invalid(format!("divergence subset must be NC or NCR, got {subset}")));
        }
        let a = self.artifact(artifact)?;
        let (sub, seeds_sub, version) = self.raw_ps(a, subset, encoder)?;
        let (name, seeds_n, _) = self.raw_ps(a, PromptStyle::N, encoder)?;
        let v = ps_divergence(sub, name);
        self.record(ids::DPHI_PS, artifact, subset.as_str(), encoder, v, seeds_sub.min(seeds_n), version)
    }

    /// Image-text alignment of the name-prompt images. With `averaged`,
    /// `eval_style` (one of `EVAL_C`, `EVAL_R`, `EVAL_CR`) selects the
    /// attribute prompt averaged with the name prompt; otherwise the raw
    /// single-prompt similarity for any eval style is returned.
    pub fn score_ita(
        &self,
        artifact: &str,
        eval_style: PromptStyle,
        vlm: &dyn VisionLanguageModel,
        averaged: bool,
    ) -> Result<ScoreRecord, ScoreError> {
        let a = self.artifact(artifact)?;
        if averaged && !matches!(eval_style, PromptStyle::EvalC | PromptStyle::EvalR | PromptStyle::EvalCR) {
            return Err(ScoreError::Invalid(format!("{eval_style} is not an attribute prompt")));
        }
        let render = |s| {
            self.templates
                .render_eval(a, s)
                .map_err(|e| ScoreError::Invalid(e.to_string()))
        };
        let key = generated_key(&self.system_id, artifact, PromptStyle::N, vlm.id());
        let images = self.set(&key)?;
        let prompt = embed_text(vlm, Some(self.cache), &render(eval_style)?)?;
        let (scorer, v) = if averaged {
            let pn = embed_text(vlm, Some(self.cache), &render(PromptStyle::EvalN)?)?;
            (ids::PHI_ITA, phi_ita(&images, &pn, &prompt, self.mode)?)
        } else {
            (ids::ITA, ita_baseline(&images, &prompt, self.mode)?)
        };
        self.record(scorer, artifact, eval_style.as_str(), vlm.id(), v, images.len(), vlm.version())
    }

    fn images(&self, label: &str, style: PromptStyle) -> Result<Vec<RgbImage>, ScoreError> {
        let store = self
            .store
            .ok_or_else(|| ScoreError::MissingComponent("image store".into()))?;
        let set = self.generated.get(&(label.to_string(), style)).ok_or_else(|| {
            ScoreError::MissingComponent(format!("generated images {}/{label}/{style}", self.system_id))
        })?;
        set.generated()
            .filter_map(|e| e.image_ref.as_deref())
            .map(|r| {
                let path = store.resolve(r);
                image::open(&path)
                    .map(|i| i.to_rgb8())
                    .map_err(|e| ScoreError::Invalid(format!("{}: {e}", path.display())))
            })
            .collect()
    }

    fn raw_div(&self, artifact: &str, dis: &dyn Dissimilarity<RgbImage>) -> Result<(f64, usize), ScoreError> {
        let per_style = PromptStyle::BENCHMARK
            .iter()
            .map(|&s| self.images(artifact, s))
            .collect::<Result<Vec<_>, _>>()?;
        let refs: Vec<Vec<&RgbImage>> = per_style.iter().map(|v| v.iter().collect()).collect();
        let r = phi_div(&refs, dis)?;
        Ok((r.value, r.items))
    }

    fn raw_lpips(&self, artifact: &str, dis: &dyn Dissimilarity<RgbImage>) -> Result<(f64, usize), ScoreError> {
        let imgs = self.images(artifact, PromptStyle::N)?;
        let refs: Vec<&RgbImage> = imgs.iter().collect();
        let r = pairwise_mean_dissimilarity(&refs, dis)?;
        Ok((r.value, r.items))
    }

    /// Pooled pairwise dissimilarity across the four benchmark styles.
    pub fn score_div(&self, artifact: &str, dis: &dyn Dissimilarity<RgbImage>) -> Result<ScoreRecord, ScoreError> {
        self.artifact(artifact)?;
        let (v, items) = self.raw_div(artifact, dis)?;
        self.record(ids::PHI_DIV, artifact, "", dis.id(), v, items, dis.version())
    }

    /// Pairwise dissimilarity among the name-prompt seeds of one artifact.
    pub fn score_lpips_artifact(&self, artifact: &str, dis: &dyn Dissimilarity<RgbImage>) -> Result<ScoreRecord, ScoreError> {
        self.artifact(artifact)?;
        let (v, items) = self.raw_lpips(artifact, dis)?;
        self.record(ids::LPIPS_N, artifact, PromptStyle::N.as_str(), dis.id(), v, items, dis.version())
    }

    /// Mean of the member artifacts' name-prompt scores. The record's
    /// `artifact` is [`category_label`].
    pub fn score_lpips_category(&self, category: &str, dis: &dyn Dissimilarity<RgbImage>) -> Result<ScoreRecord, ScoreError> {
        let members = self.dataset.in_category(category);
        if members.is_empty() {
            return Err(ScoreError::InsufficientItems { needed: 1, got: 0 });
        }
        let mut values = Vec::with_capacity(members.len());
        let mut seeds = 0;
        for a in members {
            let (v, items) = self.raw_lpips(&a.name, dis)?;
            values.push(v);
            seeds += items;
        }
        let v = lpips_category(&values)?;
        self.record(ids::LPIPS_C, &category_label(category), "", dis.id(), v, seeds, dis.version())
    }

    /// `phi_div - lpips(N)` with the same dissimilarity.
    pub fn score_div_divergence(&self, artifact: &str, dis: &dyn Dissimilarity<RgbImage>) -> Result<ScoreRecord, ScoreError> {
        self.artifact(artifact)?;
        let (div, items) = self.raw_div(artifact, dis)?;
        let (lp, _) = self.raw_lpips(artifact, dis)?;
        let v = super::diversity::div_divergence(div, lp);
        self.record(ids::DPHI_DIV, artifact, "", dis.id(), v, items, dis.version())
    }

    /// Vendi score of a category's category-prompt seeds, optionally quality
    /// weighted (quality is evaluated on the decoded seed images).
    pub fn score_vendi(
        &self,
        category: &str,
        encoder: &str,
        kernel: VendiKernel,
        quality: Option<&dyn QualityFunction<RgbImage>>,
    ) -> Result<VendiResult, ScoreError> {
        let members = self.dataset.in_category(category);
        let sets = members
            .iter()
            .map(|a| self.set(&generated_key(&self.system_id, &a.name, PromptStyle::N, encoder)))
            .collect::<Result<Vec<_>, _>>()?;
        let arts: Vec<VendiArtifact<'_>> = members
            .iter()
            .zip(&sets)
            .map(|(a, s)| VendiArtifact {
                name: &a.name,
                region: &a.region,
                continent: &a.continent,
                images: s,
            })
            .collect();
        let cat = self.set(&category_key(&self.system_id, category, encoder))?;
        let qualities = match quality {
            None => None,
            Some(q) => {
                let imgs = self.images(&category_label(category), PromptStyle::C)?;
                Some(imgs.iter().map(|i| q.quality(i)).collect::<Vec<_>>())
            }
        };
        score_vendi(&cat, &arts, kernel, self.mode, qualities.as_deref())
    }

    /// Records for a Vendi result: raw, normalised and (if present) qVS.
    pub fn vendi_records(&self, category: &str, encoder: &str, r: &VendiResult) -> Result<Vec<ScoreRecord>, ScoreError> {
        let label = category_label(category);
        let version = self.version(&category_key(&self.system_id, category, encoder));
        let style = PromptStyle::C.as_str();
        let mut out = vec![
            self.record(ids::VS, &label, style, encoder, r.vs, r.seeds, version.clone())?,
            self.record(ids::VS_NORM, &label, style, encoder, r.normalized, r.seeds, version.clone())?,
        ];
        if let Some(q) = r.qvs {
            out.push(self.record(ids::QVS, &label, style, encoder, q, r.seeds, version)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::record;
    use crate::embed::{cosine_set_similarity, embed_images, MockImageEncoder, MockVlm};
    use crate::genpipe::{Generator, MockBackend};
    use crate::scorers::vendi::ConstantQuality;
    use crate::scorers::PixelL1;

    struct Fixture {
        _dir: tempfile::TempDir,
        dataset: Dataset,
        cache: EmbeddingCache,
        store: ImageStore,
        sets: Vec<GeneratedImageSet>,
    }

    fn fixture() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let dataset = Dataset::new(
            vec![
                record("jiaozi", "Dumpling", "Food", "China"),
                record("pierogi", "Dumpling", "Food", "Poland"),
            ],
            None,
        )
        .unwrap();
        let store = ImageStore::new(dir.path().join("img"));
        let cache = EmbeddingCache::open(dir.path().join("emb")).unwrap();
        let backend = MockBackend::new("mock");
        let gen = Generator::new(&backend, store.clone());
        let enc = MockImageEncoder::new("enc");
        let vlm = MockVlm::new("vlm");
        let vlm_enc = crate::embed::VlmImageEncoder(&vlm);
        let mut sets = Vec::new();
        let paths = |s: &GeneratedImageSet| -> Vec<std::path::PathBuf> {
            s.generated().map(|e| store.resolve(e.image_ref.as_ref().unwrap())).collect()
        };
        for a in dataset.artifacts() {
            for style in PromptStyle::BENCHMARK {
                let s = gen.generate_images(a, style, &[0, 1, 2, 3]).unwrap();
                embed_images(&enc, Some(&cache), generated_key("mock", &a.name, style, "enc"), &paths(&s)).unwrap();
                if style == PromptStyle::N {
                    embed_images(&vlm_enc, Some(&cache), generated_key("mock", &a.name, style, "vlm"), &paths(&s)).unwrap();
                }
                sets.push(s);
            }
            let gt = gen.generate_prompt(&a.name, "gt", PromptStyle::N, &format!("photo of {}", a.name), &[9, 10, 11, 12]).unwrap();
            embed_images(&enc, Some(&cache), gt_key(&a.name, "enc"), &paths(&gt)).unwrap();
        }
        let label = category_label("Dumpling");
        let c = gen.generate_prompt(&label, "Food", PromptStyle::C, "An image of Dumpling", &(0..8).collect::<Vec<_>>()).unwrap();
        embed_images(&enc, Some(&cache), category_key("mock", "Dumpling", "enc"), &paths(&c)).unwrap();
        sets.push(c);
        Fixture { _dir: dir, dataset, cache, store, sets }
    }

    #[test]
    fn similarity_scores_match_direct_computation() {
        let f = fixture();
        let ctx = ScoreContext::new("mock", &f.dataset, &f.cache);
        let r = ctx.score_gt("jiaozi", PromptStyle::NC, "enc").unwrap();
        let direct = cosine_set_similarity(
            &f.cache.load(&generated_key("mock", "jiaozi", PromptStyle::NC, "enc")).unwrap(),
            &f.cache.load(&gt_key("jiaozi", "enc")).unwrap(),
            SimilarityMode::SetMeanPairwise,
        )
        .unwrap();
        assert_eq!(r.value, direct);
        assert_eq!(r.seeds_used, 4);
        assert_eq!(r.variant(), "phi_gt@enc");

        let n = ctx.score_ps("jiaozi", PromptStyle::N, "enc").unwrap();
        let nc = ctx.score_ps("jiaozi", PromptStyle::NC, "enc").unwrap();
        let d = ctx.score_ps_divergence("jiaozi", PromptStyle::NC, "enc").unwrap();
        assert!((d.value - (0.5 + nc.value - n.value)).abs() < 1e-12);
        assert!(ctx.score_ps_divergence("jiaozi", PromptStyle::NR, "enc").is_err());
        assert!(matches!(ctx.score_gt("jiaozi", PromptStyle::R, "enc"), Err(ScoreError::MissingComponent(_))));
    }

    #[test]
    fn ita_uses_vlm_space() {
        let f = fixture();
        let vlm = MockVlm::new("vlm");
        let ctx = ScoreContext::new("mock", &f.dataset, &f.cache);
        let r = ctx.score_ita("pierogi", PromptStyle::EvalCR, &vlm, true).unwrap();
        assert_eq!(r.scorer_id, ids::PHI_ITA);
        assert!((-1.0..=1.0).contains(&r.value));
        assert!(ctx.score_ita("pierogi", PromptStyle::EvalKhanuja, &vlm, true).is_err());
        let b = ctx.score_ita("pierogi", PromptStyle::EvalKhanuja, &vlm, false).unwrap();
        assert_eq!(b.scorer_id, ids::ITA);
    }

    #[test]
    fn diversity_scores() {
        let f = fixture();
        let ctx = ScoreContext::new("mock", &f.dataset, &f.cache).with_images(&f.store, &f.sets);
        let div = ctx.score_div("jiaozi", &PixelL1).unwrap();
        assert_eq!(div.seeds_used, 16);
        assert!(div.value > 0.0);
        let lp = ctx.score_lpips_artifact("jiaozi", &PixelL1).unwrap();
        let dd = ctx.score_div_divergence("jiaozi", &PixelL1).unwrap();
        assert!((dd.value - (div.value - lp.value)).abs() < 1e-12);
        let lp2 = ctx.score_lpips_artifact("pierogi", &PixelL1).unwrap();
        let cat = ctx.score_lpips_category("Dumpling", &PixelL1).unwrap();
        assert!((cat.value - (lp.value + lp2.value) / 2.0).abs() < 1e-12);
        assert_eq!(cat.artifact, "category:Dumpling");
    }

    #[test]
    fn vendi_in_range_with_constant_quality() {
        let f = fixture();
        let ctx = ScoreContext::new("mock", &f.dataset, &f.cache).with_images(&f.store, &f.sets);
        let q = ConstantQuality::default();
        let r = ctx.score_vendi("Dumpling", "enc", VendiKernel::AssignedArtifact, Some(&q)).unwrap();
        assert_eq!(r.seeds, 8);
        assert!(r.vs >= 1.0 - 1e-9 && r.vs <= 8.0 + 1e-9);
        assert_eq!(r.qvs, Some(r.vs));
        let recs = ctx.vendi_records("Dumpling", "enc", &r).unwrap();
        assert_eq!(recs.len(), 3);
    }
}
