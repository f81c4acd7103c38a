//! Stage runner behind the CLI.
//!
//! A [`RunConfig`] (TOML or JSON) names the dataset, the adapters and the
//! output directory. Stages read and write fixed locations under the output
//! directory, so any stage can be re-run on its own once its prerequisites
//! exist:
//!
//! ```text
//! <out>/validation.json
//! <out>/generation/<system>.json        generation manifests
//! <out>/generation/acceptance.csv
//! <out>/scores/<system>.jsonl           score records
//! <out>/scores/judge-<system>.jsonl     judge ratings as score records
//! <out>/score_errors.jsonl
//! <out>/judge/<system>.jsonl            raw judge replies
//! <out>/correlation/{cells.csv,cells.json,tables.md}
//! <out>/report/{benchmark.csv,benchmark.json,benchmark.md}
//! <out>/freq/{counts.csv,histogram.csv,histogram.svg,correlation.csv}
//! <out>/run_manifest.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::analysis::{
    benchmark_report, broadcast_category_scores, correlation_table, frequency_correlation,
    histogram_csv, histogram_svg, log_histogram, ConceptCounter, CorpusFormat, FrequencyOptions,
    ReportInputs, TableLayout, TableSpec,
};
use crate::crawler::{crawl_category, fetch_ground_truth, CrawlSpec, FixtureTransport, Transport, WikiClient};
use crate::dataset::{load_dataset, validate_dataset, Dataset, ExpectedStats};
use crate::embed::{
    embed_images, EmbeddingCache, ImageEncoder, MockImageEncoder, MockVlm, SimilarityMode,
    VisionLanguageModel, VlmImageEncoder,
};
use crate::genpipe::{
    acceptance_rate, load_manifest, CommandBackend, GeneratedImageSet, Generator, ImageStore,
    MockBackend, RefusalPattern, SeedInPrompt, SeedPolicy, T2IBackend,
};
use crate::gold::{aggregate_all, ingest_gold, GoldQuestion, GoldRecord};
use crate::prompts::{PromptStyle, TemplateRegistry};
use crate::scorers::context::{category_key, category_label, generated_key, gt_key, ids, ScoreContext};
use crate::scorers::mllm::{build_mllm_prompt, parse_mllm_response, JudgeMode, JudgeScores, MllmJudge, MockJudge};
use crate::scorers::records::{read_scores, write_jsonl};
use crate::scorers::vendi::{ConstantQuality, QualityFunction, VendiKernel};
use crate::scorers::{Dissimilarity, PixelL1, ScoreError, ScoreRecord};
use crate::store::{sha256_hex, write_atomic};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Validate,
    Crawl,
    Generate,
    Embed,
    Score,
    Judge,
    Correlate,
    Report,
    Freq,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Validate,
        Stage::Crawl,
        Stage::Generate,
        Stage::Embed,
        Stage::Score,
        Stage::Judge,
        Stage::Correlate,
        Stage::Report,
        Stage::Freq,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::Crawl => "crawl",
            Stage::Generate => "generate",
            Stage::Embed => "embed",
            Stage::Score => "score",
            Stage::Judge => "judge",
            Stage::Correlate => "correlate",
            Stage::Report => "report",
            Stage::Freq => "freq",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| PipelineError::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("missing prerequisite: run `{stage}` first ({detail})")]
    Prerequisite { stage: String, detail: String },
    #[error("adapter `{adapter}`: {message}")]
    Adapter { adapter: String, message: String },
    #[error("{context}: {message}")]
    Io { context: String, message: String },
}

impl PipelineError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Validation(_) => 2,
            PipelineError::Prerequisite { .. } => 3,
            PipelineError::Adapter { .. } => 4,
            PipelineError::Io { .. } => 1,
        }
    }

    fn prereq(stage: Stage, detail: impl Into<String>) -> Self {
        PipelineError::Prerequisite {
            stage: stage.to_string(),
            detail: detail.into(),
        }
    }
}

fn io_err(context: impl fmt::Display) -> impl FnOnce(std::io::Error) -> PipelineError {
    let context = context.to_string();
    move |e| PipelineError::Io {
        context,
        message: e.to_string(),
    }
}

fn other_err(context: impl fmt::Display, e: impl fmt::Display) -> PipelineError {
    PipelineError::Io {
        context: context.to_string(),
        message: e.to_string(),
    }
}

/// One text-to-image system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub id: String,
    /// `mock-t2i` or `command`.
    pub adapter: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub program: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_limit_per_minute: Option<u32>,
    /// Append the seed to the prompt for services without a seed parameter.
    #[serde(default)]
    pub seed_in_prompt: bool,
    /// Environment variable that must hold this backend's credential.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub credential_env: Option<String>,
    /// Mock only.
    #[serde(default, skip_serializing_if = "is_never")]
    pub refusal: RefusalPattern,
}

fn is_never(r: &RefusalPattern) -> bool {
    *r == RefusalPattern::Never
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrawlConfig {
    pub specs: Vec<CrawlSpec>,
    pub fixtures: PathBuf,
    /// Where to write the candidate dataset.
    pub out: PathBuf,
    /// Download this many ground-truth images per candidate (0 = skip).
    #[serde(default)]
    pub fetch_ground_truth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// Glob of caption shard files.
    pub glob: String,
    #[serde(default = "default_format")]
    pub format: CorpusFormat,
    #[serde(default)]
    pub word_boundary: bool,
}

fn default_format() -> CorpusFormat {
    CorpusFormat::Lines
}

fn default_styles() -> Vec<PromptStyle> {
    PromptStyle::BENCHMARK.to_vec()
}

fn default_eval_styles() -> Vec<PromptStyle> {
    PromptStyle::EVAL.to_vec()
}

fn default_refusal_threshold() -> f64 {
    10.0
}

fn default_layout() -> String {
    "standard".into()
}

/// Everything a run needs. Relative paths resolve against the config file's
/// directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub systems: Vec<SystemSpec>,
    #[serde(default)]
    pub encoders: Vec<String>,
    #[serde(default)]
    pub vlms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissimilarity: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<String>,
    #[serde(default = "default_styles")]
    pub styles: Vec<PromptStyle>,
    #[serde(default = "default_eval_styles")]
    pub eval_styles: Vec<PromptStyle>,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
    #[serde(default)]
    pub similarity: SimilarityMode,
    #[serde(default)]
    pub vendi_kernel: VendiKernel,
    /// Defaults to `<output_dir>/images`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_cache: Option<PathBuf>,
    /// Defaults to `<output_dir>/embeddings`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_cache: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold: Option<PathBuf>,
    #[serde(default)]
    pub gold_salt: String,
    #[serde(default = "default_layout")]
    pub layout: String,
    /// JSON object mapping system id to ELO rating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elo: Option<PathBuf>,
    #[serde(default = "default_refusal_threshold")]
    pub refusal_threshold: f64,
    #[serde(default)]
    pub expect_released: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crawl: Option<CrawlConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    /// Minimal config: a dataset and an output directory.
    pub fn new(dataset: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            dataset: dataset.into(),
            output_dir: output_dir.into(),
            systems: Vec::new(),
            encoders: Vec::new(),
            vlms: Vec::new(),
            dissimilarity: None,
            quality: None,
            judge: None,
            styles: default_styles(),
            eval_styles: default_eval_styles(),
            seed_policy: SeedPolicy::default(),
            similarity: SimilarityMode::default(),
            vendi_kernel: VendiKernel::default(),
            image_cache: None,
            embedding_cache: None,
            gold: None,
            gold_salt: String::new(),
            layout: default_layout(),
            elo: None,
            refusal_threshold: default_refusal_threshold(),
            expect_released: false,
            crawl: None,
            corpus: None,
            jobs: None,
            base_dir: PathBuf::new(),
        }
    }

    /// Reads TOML (`.toml`) or JSON (anything else).
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path.display()))?;
        let mut cfg: RunConfig = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        } else {
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        };
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn image_root(&self) -> PathBuf {
        self.image_cache
            .as_ref()
            .map(|p| self.resolve(p))
            .unwrap_or_else(|| self.out().join("images"))
    }

    pub fn embedding_root(&self) -> PathBuf {
        self.embedding_cache
            .as_ref()
            .map(|p| self.resolve(p))
            .unwrap_or_else(|| self.out().join("embeddings"))
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    fn check(&self) -> Result<(), PipelineError> {
        if let Some(s) = self.styles.iter().find(|s| !s.is_generation()) {
            return Err(PipelineError::Config(format!("`{s}` is not a generation style")));
        }
        if let Some(s) = self.eval_styles.iter().find(|s| !s.is_eval()) {
            return Err(PipelineError::Config(format!("`{s}` is not an evaluation style")));
        }
        let mut seen = BTreeSet::new();
        if let Some(s) = self.systems.iter().find(|s| !seen.insert(&s.id)) {
            return Err(PipelineError::Config(format!("system `{}` listed twice", s.id)));
        }
        Ok(())
    }
}

/// Adapter construction from config identifiers.
pub mod registry {
    use super::*;

    pub fn backend(spec: &SystemSpec) -> Result<Box<dyn T2IBackend>, PipelineError> {
        let err = |message: String| PipelineError::Adapter {
            adapter: spec.id.clone(),
            message,
        };
        if let Some(var) = &spec.credential_env {
            if std::env::var_os(var).is_none() {
                return Err(err(format!("credential variable `{var}` is not set")));
            }
        }
        let inner: Box<dyn T2IBackend> = match spec.adapter.as_str() {
            "mock-t2i" => Box::new(MockBackend::new(&spec.id).with_refusal(spec.refusal.clone())),
            "command" => {
                let program = spec
                    .program
                    .clone()
                    .ok_or_else(|| err("`command` adapter needs `program`".into()))?;
                Box::new(
                    CommandBackend::new(&spec.id, program, spec.args.clone())
                        .with_rate_limit(spec.rate_limit_per_minute),
                )
            }
            other => return Err(err(format!("unknown T2I adapter `{other}`"))),
        };
        Ok(if spec.seed_in_prompt {
            Box::new(SeedInPrompt::new(inner))
        } else {
            inner
        })
    }

    pub fn encoder(id: &str) -> Result<Box<dyn ImageEncoder>, PipelineError> {
        if id.starts_with("mock-encoder") {
            return Ok(Box::new(MockImageEncoder::new(id)));
        }
        Err(PipelineError::Adapter {
            adapter: id.into(),
            message: "unknown image encoder".into(),
        })
    }

    pub fn vlm(id: &str) -> Result<Box<dyn VisionLanguageModel>, PipelineError> {
        if id.starts_with("mock-vlm") {
            return Ok(Box::new(MockVlm::new(id)));
        }
        Err(PipelineError::Adapter {
            adapter: id.into(),
            message: "unknown vision-language model".into(),
        })
    }

    pub fn dissimilarity(id: &str) -> Result<Box<dyn Dissimilarity<RgbImage>>, PipelineError> {
        match id {
            "pixel-l1" => Ok(Box::new(PixelL1)),
            _ => Err(PipelineError::Adapter {
                adapter: id.into(),
                message: "unknown dissimilarity".into(),
            }),
        }
    }

    pub fn quality(id: &str) -> Result<Box<dyn QualityFunction<RgbImage>>, PipelineError> {
        let bad = || PipelineError::Adapter {
            adapter: id.into(),
            message: "unknown quality function".into(),
        };
        match id.split_once(':') {
            None if id == "constant" => Ok(Box::new(ConstantQuality::default())),
            Some(("constant", v)) => Ok(Box::new(ConstantQuality(v.parse().map_err(|_| bad())?))),
            _ => Err(bad()),
        }
    }

    pub fn judge(id: &str) -> Result<Box<dyn MllmJudge>, PipelineError> {
        if id.starts_with("mock-judge") {
            return Ok(Box::new(MockJudge::new(id)));
        }
        Err(PipelineError::Adapter {
            adapter: id.into(),
            message: "unknown judge".into(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: Stage,
    pub seconds: f64,
}

/// Written after every run; together with the config it pins the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub config: RunConfig,
    pub stages: Vec<StageTiming>,
    pub adapter_versions: BTreeMap<String, String>,
    pub crate_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
pub struct ScoreFailure {
    pub system_id: String,
    pub scorer_id: String,
    pub artifact: String,
    pub style: String,
    pub backend: String,
    pub message: String,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(v).expect("serializable output");
    text.push('\n');
    write_atomic(path, text.as_bytes()).map_err(io_err(path.display()))
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
}

/// Loaded inputs shared by the stages of one run.
pub struct Run<'c> {
    pub config: &'c RunConfig,
    dataset: Option<Dataset>,
    pool: rayon::ThreadPool,
    versions: BTreeMap<String, String>,
}

impl<'c> Run<'c> {
    pub fn new(config: &'c RunConfig) -> Result<Self, PipelineError> {
        config.check()?;
        Ok(Run {
            config,
            dataset: None,
            pool: pool(config.jobs)?,
            versions: BTreeMap::new(),
        })
    }

    fn dataset(&mut self) -> Result<&Dataset, PipelineError> {
        if self.dataset.is_none() {
            let path = self.config.resolve(&self.config.dataset);
            let d = load_dataset(&path).map_err(|e| PipelineError::Validation(e.to_string()))?;
            self.dataset = Some(d);
        }
        Ok(self.dataset.as_ref().expect("loaded"))
    }

    fn dataset_dir(&self) -> PathBuf {
        self.config
            .resolve(&self.config.dataset)
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default()
    }

    fn manifest_path(&self, system: &str) -> PathBuf {
        self.config
            .out()
            .join("generation")
            .join(format!("{}.json", crate::store::path_segment(system)))
    }

    fn load_generation(&self, system: &str, needed_by: Stage) -> Result<Vec<GeneratedImageSet>, PipelineError> {
        let p = self.manifest_path(system);
        if !p.exists() {
            return Err(PipelineError::prereq(
                Stage::Generate,
                format!("{needed_by} needs {}", p.display()),
            ));
        }
        load_manifest(&p).map_err(|e| other_err(p.display(), e))
    }

    pub fn run_stage(&mut self, stage: Stage) -> Result<(), PipelineError> {
        info!(%stage, "running stage");
        match stage {
            Stage::Validate => self.validate(),
            Stage::Crawl => self.crawl(),
            Stage::Generate => self.generate(),
            Stage::Embed => self.embed(),
            Stage::Score => self.score(),
            Stage::Judge => self.judge(),
            Stage::Correlate => self.correlate(),
            Stage::Report => self.report(),
            Stage::Freq => self.freq(),
        }
    }

    fn validate(&mut self) -> Result<(), PipelineError> {
        let expected = self.config.expect_released.then(ExpectedStats::released);
        let out = self.config.out().join("validation.json");
        let report = validate_dataset(self.dataset()?, expected.as_ref());
        write_json(&out, &report)?;
        if !report.passed {
            let failed: Vec<String> = report
                .checks
                .iter()
                .filter(|c| !c.pass)
                .map(|c| format!("{} (expected {}, got {})", c.name, c.expected, c.actual))
                .collect();
            return Err(PipelineError::Validation(if failed.is_empty() {
                "empty dataset".into()
            } else {
                failed.join("; ")
            }));
        }
        Ok(())
    }

    fn crawl(&mut self) -> Result<(), PipelineError> {
        let cfg = self
            .config
            .crawl
            .clone()
            .ok_or_else(|| PipelineError::Config("`crawl` section missing".into()))?;
        let transport = FixtureTransport::new(self.config.resolve(&cfg.fixtures));
        let out = self.config.resolve(&cfg.out);
        run_crawl(&cfg.specs, &transport, &out, cfg.fetch_ground_truth)
    }

    fn generate(&mut self) -> Result<(), PipelineError> {
        if self.config.systems.is_empty() {
            return Err(PipelineError::Config("no systems configured".into()));
        }
        let store = ImageStore::new(self.config.image_root());
        let styles = self.config.styles.clone();
        let policy = self.config.seed_policy.clone();
        let templates = TemplateRegistry::builtin();
        let dataset = self.dataset()?.clone();
        let mut rates = Vec::new();
        for spec in &self.config.systems {
            let backend = registry::backend(spec)?;
            self.versions.insert(spec.id.clone(), backend.version());
            let generator = Generator::new(backend.as_ref(), store.clone());
            let mut jobs: Vec<(&crate::ArtifactRecord, PromptStyle)> = Vec::new();
            for a in dataset.scoring_artifacts() {
                for &s in &styles {
                    jobs.push((a, s));
                }
            }
            let mut sets: Vec<GeneratedImageSet> = self.pool.install(|| {
                jobs.par_iter()
                    .map(|(a, s)| generator.generate_images(a, *s, &policy.seeds(&spec.id, *s)))
                    .collect::<Result<_, _>>()
            })
            .map_err(|e| PipelineError::Adapter {
                adapter: spec.id.clone(),
                message: e.to_string(),
            })?;
            // category-only prompt sets for the perceptual-similarity and Vendi scorers
            let mut categories: BTreeMap<&str, &crate::ArtifactRecord> = BTreeMap::new();
            for a in dataset.scoring_artifacts() {
                categories.entry(&a.category).or_insert(a);
            }
            let cat_sets: Vec<GeneratedImageSet> = self.pool.install(|| {
                categories
                    .par_iter()
                    .map(|(c, a)| {
                        let prompt = templates.render_generation(a, PromptStyle::C)?;
                        generator.generate_prompt(
                            &category_label(c),
                            &a.supercategory,
                            PromptStyle::C,
                            &prompt,
                            &policy.seeds(&spec.id, PromptStyle::C),
                        )
                    })
                    .collect::<Result<_, _>>()
            })
            .map_err(|e| PipelineError::Adapter {
                adapter: spec.id.clone(),
                message: e.to_string(),
            })?;
            sets.extend(cat_sets);
            let failed: usize = sets.iter().map(|s| s.entries.iter().filter(|e| e.failed).count()).sum();
            if failed > 0 {
                warn!(system = %spec.id, failed, "seeds failed after retries; re-run generate to retry them");
            }
            let benchmark: Vec<GeneratedImageSet> = sets.iter().filter(|s| s.style != PromptStyle::C).cloned().collect();
            for sc in dataset.supercategories() {
                if let Ok(r) = acceptance_rate(&benchmark, sc) {
                    rates.push((spec.id.clone(), sc.to_string(), r));
                }
            }
            write_json(&self.manifest_path(&spec.id), &sets)?;
        }
        let mut csv = String::from("system,supercategory,acceptance_rate\n");
        for (s, sc, r) in rates {
            csv.push_str(&format!("{s},{sc},{r}\n"));
        }
        let p = self.config.out().join("generation").join("acceptance.csv");
        write_atomic(&p, csv.as_bytes()).map_err(io_err(p.display()))
    }

    fn embed(&mut self) -> Result<(), PipelineError> {
        if self.config.encoders.is_empty() && self.config.vlms.is_empty() {
            return Err(PipelineError::Config("no encoders or VLMs configured".into()));
        }
        let cache = EmbeddingCache::open(self.config.embedding_root()).map_err(|e| other_err("embedding cache", e))?;
        let store = ImageStore::new(self.config.image_root());
        let dataset = self.dataset()?.clone();
        let base = self.dataset_dir();
        let encoders = self
            .config
            .encoders
            .iter()
            .map(|id| registry::encoder(id))
            .collect::<Result<Vec<_>, _>>()?;
        let vlms = self
            .config
            .vlms
            .iter()
            .map(|id| registry::vlm(id))
            .collect::<Result<Vec<_>, _>>()?;
        let adapter_err = |id: &str, e: crate::embed::EmbedError| PipelineError::Adapter {
            adapter: id.to_string(),
            message: e.to_string(),
        };
        for e in &encoders {
            self.versions.insert(e.id().to_string(), e.version());
        }
        for v in &vlms {
            self.versions.insert(v.id().to_string(), v.version());
        }

        for spec in &self.config.systems {
            let sets = self.load_generation(&spec.id, Stage::Embed)?;
            let paths = |s: &GeneratedImageSet| -> Vec<PathBuf> {
                s.generated()
                    .filter_map(|e| e.image_ref.as_deref())
                    .map(|r| store.resolve(r))
                    .collect()
            };
            for enc in &encoders {
                self.pool.install(|| {
                    sets.par_iter()
                        .map(|s| {
                            let key = if s.style == PromptStyle::C {
                                let cat = s.artifact.strip_prefix("category:").unwrap_or(&s.artifact);
                                category_key(&spec.id, cat, enc.id())
                            } else {
                                generated_key(&spec.id, &s.artifact, s.style, enc.id())
                            };
                            embed_images(enc.as_ref(), Some(&cache), key, &paths(s)).map(|_| ())
                        })
                        .collect::<Result<(), _>>()
                })
                .map_err(|e| adapter_err(enc.id(), e))?;
            }
            for vlm in &vlms {
                let as_encoder = VlmImageEncoder(vlm.as_ref());
                self.pool.install(|| {
                    sets.par_iter()
                        .filter(|s| s.style == PromptStyle::N)
                        .map(|s| {
                            let key = generated_key(&spec.id, &s.artifact, s.style, vlm.id());
                            embed_images(&as_encoder, Some(&cache), key, &paths(s)).map(|_| ())
                        })
                        .collect::<Result<(), _>>()
                })
                .map_err(|e| adapter_err(vlm.id(), e))?;
            }
        }
        for enc in &encoders {
            let artifacts: Vec<&crate::ArtifactRecord> = dataset.scoring_artifacts().collect();
            self.pool.install(|| {
                artifacts
                    .par_iter()
                    .map(|a| {
                        let paths: Vec<PathBuf> = a
                            .ground_truth
                            .iter()
                            .map(|g| {
                                let p = Path::new(g);
                                if p.is_absolute() {
                                    p.to_path_buf()
                                } else {
                                    base.join(p)
                                }
                            })
                            .collect();
                        let out = embed_images(enc.as_ref(), Some(&cache), gt_key(&a.name, enc.id()), &paths)?;
                        if !out.skipped.is_empty() {
                            warn!(artifact = %a.name, skipped = out.skipped.len(), "ground-truth images skipped");
                        }
                        Ok(())
                    })
                    .collect::<Result<(), _>>()
            })
            .map_err(|e| adapter_err(enc.id(), e))?;
        }
        Ok(())
    }

    fn score(&mut self) -> Result<(), PipelineError> {
        let root = self.config.embedding_root();
        let cache = EmbeddingCache::open(&root).map_err(|e| other_err("embedding cache", e))?;
        if cache.is_empty() {
            return Err(PipelineError::prereq(
                Stage::Embed,
                format!("embedding cache {} is empty", root.display()),
            ));
        }
        let store = ImageStore::new(self.config.image_root());
        let dataset = self.dataset()?.clone();
        let dis = self.config.dissimilarity.as_deref().map(registry::dissimilarity).transpose()?;
        let quality = self.config.quality.as_deref().map(registry::quality).transpose()?;
        let vlms = self
            .config
            .vlms
            .iter()
            .map(|id| registry::vlm(id))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(d) = &dis {
            self.versions.insert(d.id().to_string(), d.version());
        }
        let mut failures = Vec::new();
        for spec in &self.config.systems {
            let sets = self.load_generation(&spec.id, Stage::Score)?;
            let ctx = ScoreContext::new(&spec.id, &dataset, &cache)
                .with_images(&store, &sets)
                .with_mode(self.config.similarity);
            let tasks = score_tasks(self.config, &dataset, vlms.len(), dis.is_some());
            let results: Vec<Result<Vec<ScoreRecord>, Box<ScoreFailure>>> = self.pool.install(|| {
                tasks
                    .par_iter()
                    .map(|t| {
                        run_task(t, &ctx, &vlms, dis.as_deref(), quality.as_deref(), self.config.vendi_kernel)
                            .map_err(|e| Box::new(t.failure(&spec.id, e)))
                    })
                    .collect()
            });
            let mut records = Vec::new();
            for r in results {
                match r {
                    Ok(rs) => records.extend(rs),
                    Err(f) => failures.push(*f),
                }
            }
            let p = self
                .config
                .out()
                .join("scores")
                .join(format!("{}.jsonl", crate::store::path_segment(&spec.id)));
            write_jsonl(&p, &records).map_err(|e| other_err(p.display(), e))?;
        }
        failures.sort();
        let mut body = String::new();
        for f in &failures {
            body.push_str(&serde_json::to_string(f).expect("failure serializes"));
            body.push('\n');
        }
        let p = self.config.out().join("score_errors.jsonl");
        write_atomic(&p, body.as_bytes()).map_err(io_err(p.display()))?;
        if !failures.is_empty() {
            warn!(count = failures.len(), path = %p.display(), "some scores could not be computed");
        }
        Ok(())
    }

    fn judge(&mut self) -> Result<(), PipelineError> {
        let id = self
            .config
            .judge
            .clone()
            .ok_or_else(|| PipelineError::Config("no judge configured".into()))?;
        let judge = registry::judge(&id)?;
        self.versions.insert(id.clone(), judge.version());
        let store = ImageStore::new(self.config.image_root());
        let dataset = self.dataset()?.clone();
        let base = self.dataset_dir();
        for spec in &self.config.systems {
            let sets = self.load_generation(&spec.id, Stage::Judge)?;
            let by_key: BTreeMap<(&str, PromptStyle), &GeneratedImageSet> =
                sets.iter().map(|s| ((s.artifact.as_str(), s.style), s)).collect();
            let artifacts: Vec<&crate::ArtifactRecord> = dataset.scoring_artifacts().collect();
            let rows: Vec<(Vec<ScoreRecord>, serde_json::Value)> = self.pool.install(|| {
                artifacts
                    .par_iter()
                    .filter_map(|a| {
                        let set = by_key.get(&(a.name.as_str(), PromptStyle::N))?;
                        let img = set.generated().next()?.image_ref.as_deref().map(|r| store.resolve(r))?;
                        Some(judge_artifact(judge.as_ref(), &spec.id, a, &img, &base))
                    })
                    .collect()
            });
            let mut records = Vec::new();
            let mut raw = String::new();
            for (r, v) in rows {
                records.extend(r);
                raw.push_str(&v.to_string());
                raw.push('\n');
            }
            let seg = crate::store::path_segment(&spec.id);
            let p = self.config.out().join("scores").join(format!("judge-{seg}.jsonl"));
            write_jsonl(&p, &records).map_err(|e| other_err(p.display(), e))?;
            let p = self.config.out().join("judge").join(format!("{seg}.jsonl"));
            write_atomic(&p, raw.as_bytes()).map_err(io_err(p.display()))?;
        }
        Ok(())
    }

    fn scores(&self, needed_by: Stage) -> Result<Vec<ScoreRecord>, PipelineError> {
        let dir = self.config.out().join("scores");
        let records = if dir.is_dir() {
            read_scores(&dir).map_err(|e| other_err(dir.display(), e))?
        } else {
            Vec::new()
        };
        if records.is_empty() {
            return Err(PipelineError::prereq(
                Stage::Score,
                format!("{needed_by} found no score records in {}", dir.display()),
            ));
        }
        Ok(records)
    }

    fn gold(&self) -> Result<Vec<GoldRecord>, PipelineError> {
        let Some(p) = &self.config.gold else {
            return Ok(Vec::new());
        };
        let p = self.config.resolve(p);
        let g = ingest_gold(&p, &self.config.gold_salt).map_err(|e| PipelineError::Validation(e.to_string()))?;
        if !g.rejects.is_empty() {
            warn!(rejected = g.rejects.len(), "gold rows rejected");
            write_json(&self.config.out().join("gold_rejects.json"), &g.rejects)?;
        }
        Ok(g.records)
    }

    fn correlate(&mut self) -> Result<(), PipelineError> {
        let scores = self.scores(Stage::Correlate)?;
        if self.config.gold.is_none() {
            return Err(PipelineError::Config("correlate needs `gold`".into()));
        }
        let gold = self.gold()?;
        let layout = TableLayout::by_name(&self.config.layout)
            .ok_or_else(|| PipelineError::Config(format!("unknown layout `{}`", self.config.layout)))?;
        let dir = self.config.out().join("correlation");
        let dataset = self.dataset()?;
        write_correlation(&scores, &gold, Some(dataset), layout, &dir)
    }

    fn report(&mut self) -> Result<(), PipelineError> {
        let scores = self.scores(Stage::Report)?;
        let gold = self.gold()?;
        let elo = match &self.config.elo {
            Some(p) => read_elo(&self.config.resolve(p))?,
            None => BTreeMap::new(),
        };
        let mut rates = BTreeMap::new();
        for spec in &self.config.systems {
            if let Ok(sets) = self.load_generation(&spec.id, Stage::Report) {
                let total: usize = sets.iter().filter(|s| s.style != PromptStyle::C).map(|s| s.entries.len()).sum();
                let refused: usize = sets.iter().filter(|s| s.style != PromptStyle::C).map(|s| s.refused_count()).sum();
                if total > 0 {
                    rates.insert(spec.id.clone(), 100.0 * refused as f64 / total as f64);
                }
            }
        }
        let dataset = self.dataset()?;
        let scores = broadcast_category_scores(&scores, dataset);
        let systems: Vec<String> = if self.config.systems.is_empty() {
            scores.iter().map(|r| r.system_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
        } else {
            self.config.systems.iter().map(|s| s.id.clone()).collect()
        };
        write_report(
            &ReportInputs {
                systems: &systems,
                scores: &scores,
                gold: &gold,
                elo: &elo,
                refusal_rates: &rates,
                refusal_threshold: self.config.refusal_threshold,
            },
            &self.config.out().join("report"),
        )
    }

    fn freq(&mut self) -> Result<(), PipelineError> {
        let corpus = self
            .config
            .corpus
            .clone()
            .ok_or_else(|| PipelineError::Config("`corpus` section missing".into()))?;
        let pattern = if Path::new(&corpus.glob).is_absolute() {
            corpus.glob.clone()
        } else {
            self.config.base_dir.join(&corpus.glob).to_string_lossy().into_owned()
        };
        let gold = self.gold()?;
        let systems: Vec<String> = self.config.systems.iter().map(|s| s.id.clone()).collect();
        let dir = self.config.out().join("freq");
        let dataset = self.dataset()?;
        run_freq(
            &pattern,
            FrequencyOptions {
                word_boundary: corpus.word_boundary,
                format: corpus.format,
            },
            dataset,
            &gold,
            &systems,
            &dir,
        )
    }
}

/// One unit of scoring work.
#[derive(Debug, Clone)]
enum Task {
    Gt(String, PromptStyle, String),
    Ps(String, PromptStyle, String),
    PsDivergence(String, PromptStyle, String),
    Ita(String, PromptStyle, usize, bool),
    Div(String),
    LpipsN(String),
    LpipsC(String),
    DivDivergence(String),
    Vendi(String, String),
}

impl Task {
    fn failure(&self, system: &str, e: ScoreError) -> ScoreFailure {
        let (scorer, artifact, style, backend) = match self {
            Task::Gt(a, s, e) => (ids::PHI_GT, a.clone(), s.to_string(), e.clone()),
            Task::Ps(a, s, e) => (ids::PHI_PS, a.clone(), s.to_string(), e.clone()),
            Task::PsDivergence(a, s, e) => (ids::DPHI_PS, a.clone(), s.to_string(), e.clone()),
            Task::Ita(a, s, v, avg) => (
                if *avg { ids::PHI_ITA } else { ids::ITA },
                a.clone(),
                s.to_string(),
                format!("vlm#{v}"),
            ),
            Task::Div(a) => (ids::PHI_DIV, a.clone(), String::new(), String::new()),
            Task::LpipsN(a) => (ids::LPIPS_N, a.clone(), "N".into(), String::new()),
            Task::LpipsC(c) => (ids::LPIPS_C, category_label(c), String::new(), String::new()),
            Task::DivDivergence(a) => (ids::DPHI_DIV, a.clone(), String::new(), String::new()),
            Task::Vendi(c, e) => (ids::VS, category_label(c), "C".into(), e.clone()),
        };
        ScoreFailure {
            system_id: system.to_string(),
            scorer_id: scorer.to_string(),
            artifact,
            style,
            backend,
            message: e.to_string(),
        }
    }
}

fn score_tasks(cfg: &RunConfig, dataset: &Dataset, n_vlms: usize, with_dis: bool) -> Vec<Task> {
    let mut tasks = Vec::new();
    let artifacts: Vec<&crate::ArtifactRecord> = dataset.scoring_artifacts().collect();
    let categories: BTreeSet<&str> = artifacts.iter().map(|a| a.category.as_str()).collect();
    for enc in &cfg.encoders {
        for a in &artifacts {
            for &s in &cfg.styles {
                tasks.push(Task::Gt(a.name.clone(), s, enc.clone()));
                tasks.push(Task::Ps(a.name.clone(), s, enc.clone()));
            }
            for s in [PromptStyle::NC, PromptStyle::NCR] {
                if cfg.styles.contains(&s) && cfg.styles.contains(&PromptStyle::N) {
                    tasks.push(Task::PsDivergence(a.name.clone(), s, enc.clone()));
                }
            }
        }
        for c in &categories {
            tasks.push(Task::Vendi(c.to_string(), enc.clone()));
        }
    }
    if cfg.styles.contains(&PromptStyle::N) {
        for v in 0..n_vlms {
            for a in &artifacts {
                for &s in &cfg.eval_styles {
                    tasks.push(Task::Ita(a.name.clone(), s, v, false));
                    if matches!(s, PromptStyle::EvalC | PromptStyle::EvalR | PromptStyle::EvalCR) {
                        tasks.push(Task::Ita(a.name.clone(), s, v, true));
                    }
                }
            }
        }
    }
    if with_dis {
        let all_benchmark = PromptStyle::BENCHMARK.iter().all(|s| cfg.styles.contains(s));
        for a in &artifacts {
            tasks.push(Task::LpipsN(a.name.clone()));
            if all_benchmark {
                tasks.push(Task::Div(a.name.clone()));
                tasks.push(Task::DivDivergence(a.name.clone()));
            }
        }
        for c in &categories {
            tasks.push(Task::LpipsC(c.to_string()));
        }
    }
    tasks
}

fn run_task(
    t: &Task,
    ctx: &ScoreContext<'_>,
    vlms: &[Box<dyn VisionLanguageModel>],
    dis: Option<&dyn Dissimilarity<RgbImage>>,
    quality: Option<&dyn QualityFunction<RgbImage>>,
    kernel: VendiKernel,
) -> Result<Vec<ScoreRecord>, ScoreError> {
    let dis = || dis.ok_or_else(|| ScoreError::MissingComponent("dissimilarity".into()));
    Ok(match t {
        Task::Gt(a, s, e) => vec![ctx.score_gt(a, *s, e)?],
        Task::Ps(a, s, e) => vec![ctx.score_ps(a, *s, e)?],
        Task::PsDivergence(a, s, e) => vec![ctx.score_ps_divergence(a, *s, e)?],
        Task::Ita(a, s, v, avg) => vec![ctx.score_ita(a, *s, vlms[*v].as_ref(), *avg)?],
        Task::Div(a) => vec![ctx.score_div(a, dis()?)?],
        Task::LpipsN(a) => vec![ctx.score_lpips_artifact(a, dis()?)?],
        Task::LpipsC(c) => vec![ctx.score_lpips_category(c, dis()?)?],
        Task::DivDivergence(a) => vec![ctx.score_div_divergence(a, dis()?)?],
        Task::Vendi(c, e) => {
            let r = ctx.score_vendi(c, e, kernel, quality)?;
            ctx.vendi_records(c, e, &r)?
        }
    })
}

fn judge_artifact(
    judge: &dyn MllmJudge,
    system: &str,
    a: &crate::ArtifactRecord,
    image: &Path,
    base: &Path,
) -> (Vec<ScoreRecord>, serde_json::Value) {
    let mut records = Vec::new();
    let mut raw = serde_json::Map::new();
    raw.insert("system_id".into(), system.into());
    raw.insert("artifact".into(), a.name.as_str().into());
    for mode in [JudgeMode::Ps, JudgeMode::CureGt] {
        let key = match mode {
            JudgeMode::Ps => "ps",
            JudgeMode::CureGt => "cure_gt",
        };
        let mut images = vec![image.to_path_buf()];
        if mode == JudgeMode::Ps {
            images.extend(a.ground_truth.iter().map(|g| base.join(g)));
        }
        let outcome = build_mllm_prompt(a, mode)
            .map_err(|e| e.to_string())
            .and_then(|p| judge.ask(&p, &images))
            .and_then(|reply| {
                raw.insert(format!("{key}_reply"), reply.as_str().into());
                parse_mllm_response(&reply, mode).map_err(|e| e.to_string())
            });
        let mk = |scorer: &str, v: u8| ScoreRecord {
            scorer_id: scorer.to_string(),
            system_id: system.to_string(),
            artifact: a.name.clone(),
            style: "N".into(),
            encoder_or_vlm: judge.id().to_string(),
            value: f64::from(v),
            seeds_used: 1,
            adapter_version: judge.version(),
        };
        match outcome {
            Ok(JudgeScores::Ps { similarity_rating, .. }) => records.push(mk("mllm_ps", similarity_rating)),
            Ok(JudgeScores::CureGt {
                country_likelihood,
                item_accuracy,
                ..
            }) => {
                records.push(mk("mllm_cure", country_likelihood));
                records.push(mk("mllm_gt", item_accuracy));
            }
            Err(e) => {
                raw.insert(format!("{key}_error"), e.into());
            }
        }
    }
    (records, serde_json::Value::Object(raw))
}

/// Crawls every spec through `transport` and writes `{"artifacts": [...]}`
/// to `out`, plus `<out>.crawl.json` with skips and the review list.
pub fn run_crawl(
    specs: &[CrawlSpec],
    transport: &dyn Transport,
    out: &Path,
    fetch_k: usize,
) -> Result<(), PipelineError> {
    let client = WikiClient::new(transport);
    let mut artifacts = Vec::new();
    let mut reports = Vec::new();
    for spec in specs {
        let r = crawl_category(spec, &client).map_err(|e| PipelineError::Adapter {
            adapter: "crawler".into(),
            message: e.to_string(),
        })?;
        let mut rejected = Vec::new();
        for c in &r.candidates {
            if fetch_k == 0 {
                artifacts.push(c.clone());
                continue;
            }
            let dir = out.parent().unwrap_or(Path::new(".")).join("ground_truth");
            match fetch_ground_truth(c, &client, fetch_k, &dir) {
                Ok((rec, _)) => artifacts.push(rec),
                Err(e) => rejected.push(serde_json::json!({"entry": c.name, "reason": e.to_string()})),
            }
        }
        reports.push(serde_json::json!({
            "spec": spec,
            "candidates": r.candidates.len(),
            "skipped": r.skipped,
            "review": r.review,
            "ground_truth_rejected": rejected,
        }));
    }
    write_json(out, &serde_json::json!({ "artifacts": artifacts }))?;
    let mut side = out.as_os_str().to_owned();
    side.push(".crawl.json");
    write_json(Path::new(&side), &reports)
}

/// Correlation cells for `scores` against gold, written as CSV, JSON and
/// markdown into `dir`.
pub fn write_correlation(
    scores: &[ScoreRecord],
    gold: &[GoldRecord],
    dataset: Option<&Dataset>,
    mut layout: TableLayout,
    dir: &Path,
) -> Result<(), PipelineError> {
    let scores = match dataset {
        Some(d) => broadcast_category_scores(scores, d),
        None => scores.to_vec(),
    };
    if scores.iter().any(|r| r.scorer_id.starts_with("mllm_")) {
        layout.tables.push(TableSpec {
            name: "mllm-judge".into(),
            scorers: vec!["mllm_ps".into(), "mllm_cure".into(), "mllm_gt".into()],
        });
    }
    let aggregates = aggregate_all(gold);
    let table = correlation_table(&scores, &aggregates, &layout).map_err(|e| PipelineError::Validation(e.to_string()))?;
    let csv = table.to_csv();
    write_atomic(&dir.join("cells.csv"), csv.as_bytes()).map_err(io_err(dir.display()))?;
    write_json(&dir.join("cells.json"), &table)?;
    write_atomic(&dir.join("tables.md"), table.to_markdown().as_bytes()).map_err(io_err(dir.display()))
}

pub fn read_elo(path: &Path) -> Result<BTreeMap<String, f64>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path.display()))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

pub fn write_report(inputs: &ReportInputs<'_>, dir: &Path) -> Result<(), PipelineError> {
    let r = benchmark_report(inputs).map_err(|e| PipelineError::Validation(e.to_string()))?;
    write_atomic(&dir.join("benchmark.csv"), r.to_csv().as_bytes()).map_err(io_err(dir.display()))?;
    write_json(&dir.join("benchmark.json"), &r)?;
    write_atomic(&dir.join("benchmark.md"), r.to_markdown().as_bytes()).map_err(io_err(dir.display()))
}

/// Concept frequency of every artifact name over the corpus shards matched
/// by `pattern`; with gold records, also per-supercategory correlations with
/// the GT question for each system.
pub fn run_freq(
    pattern: &str,
    opts: FrequencyOptions,
    dataset: &Dataset,
    gold: &[GoldRecord],
    systems: &[String],
    dir: &Path,
) -> Result<(), PipelineError> {
    let files = crate::analysis::corpus_files(pattern).map_err(|e| PipelineError::Config(e.to_string()))?;
    if files.is_empty() {
        warn!(pattern, "no corpus shards matched");
    }
    let names: Vec<String> = dataset.artifacts().iter().map(|a| a.name.clone()).collect();
    let counter = ConceptCounter::new(&names, opts);
    let counts = counter.count_files(&files).map_err(|e| other_err(pattern, e))?;
    write_counts(&counts, &dir.join("counts.csv"))?;
    let bins = log_histogram(&counts);
    write_atomic(&dir.join("histogram.csv"), histogram_csv(&bins).as_bytes()).map_err(io_err(dir.display()))?;
    write_atomic(&dir.join("histogram.svg"), histogram_svg(&bins).as_bytes()).map_err(io_err(dir.display()))?;
    if !gold.is_empty() {
        let aggs = aggregate_all(gold);
        let systems: Vec<String> = if systems.is_empty() {
            aggs.iter().map(|g| g.system_id.clone()).collect::<BTreeSet<_>>().into_iter().collect()
        } else {
            systems.to_vec()
        };
        let mut csv = String::from("system,supercategory,rho,n\n");
        for s in &systems {
            let per = frequency_correlation(&counts, &aggs, dataset, s, GoldQuestion::Gt)
                .map_err(|e| PipelineError::Validation(e.to_string()))?;
            for (sc, (rho, n)) in per {
                let v = rho.value().map(|v| v.to_string()).unwrap_or_default();
                csv.push_str(&format!("{s},{sc},{v},{n}\n"));
            }
        }
        write_atomic(&dir.join("correlation.csv"), csv.as_bytes()).map_err(io_err(dir.display()))?;
    }
    Ok(())
}

/// `name,count` CSV.
pub fn write_counts(counts: &BTreeMap<String, u64>, path: &Path) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["name", "count"]).expect("in-memory csv");
    for (n, c) in counts {
        w.write_record([n.as_str(), &c.to_string()]).expect("in-memory csv");
    }
    let bytes = w.into_inner().expect("in-memory csv");
    write_atomic(path, &bytes).map_err(io_err(path.display()))
}

/// Runs `stages` in pipeline order and writes the run manifest. Stops at
/// the first failing stage.
pub fn run_pipeline(config: &RunConfig, stages: &[Stage]) -> Result<RunManifest, PipelineError> {
    let mut run = Run::new(config)?;
    let mut ordered: Vec<Stage> = stages.to_vec();
    ordered.sort();
    ordered.dedup();
    let mut timings = Vec::new();
    let mut result = Ok(());
    for stage in ordered {
        let t0 = Instant::now();
        result = run.run_stage(stage);
        timings.push(StageTiming {
            stage,
            seconds: t0.elapsed().as_secs_f64(),
        });
        if result.is_err() {
            break;
        }
    }
    let manifest = RunManifest {
        config_sha256: config.hash(),
        config: config.clone(),
        stages: timings,
        adapter_versions: run.versions.clone(),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let out = config.out();
    if std::fs::create_dir_all(&out).is_ok() {
        write_json(&out.join("run_manifest.json"), &manifest)?;
    }
    result.map(|()| manifest)
}

/// A self-contained project on mock adapters: four artifacts with
/// ground-truth images, a gold export, ELO ratings, a caption corpus and a
/// config that runs every stage except `crawl`.
pub mod demo {
    use super::*;

    pub const CONFIG: &str = r#"dataset = "dataset.json"
output_dir = "out"
encoders = ["mock-encoder"]
vlms = ["mock-vlm"]
dissimilarity = "pixel-l1"
quality = "constant"
judge = "mock-judge"
gold = "gold.csv"
gold_salt = "demo"
elo = "elo.json"

[[systems]]
id = "mock-a"
adapter = "mock-t2i"

[[systems]]
id = "mock-b"
adapter = "mock-t2i"
refusal = { every_nth_seed = 4 }

[seed_policy]
default_seeds = 4
overrides = []
category_seeds = 8

[corpus]
glob = "corpus/*.txt"
word_boundary = true
"#;

    const ARTIFACTS: [(&str, &str, &str, &str); 4] = [
        ("jiaozi", "China", "Asia", "GS"),
        ("momo", "Nepal", "Asia", "GS"),
        ("pierogi", "Poland", "Europe", "GN"),
        ("ravioli", "Italy", "Europe", "GN"),
    ];

    /// Writes the project into `dir` and returns the config path.
    pub fn write(dir: &Path) -> Result<PathBuf, PipelineError> {
        let source = MockBackend::new("demo-photos");
        let mut artifacts = Vec::new();
        for (name, region, continent, bucket) in ARTIFACTS {
            let mut refs = Vec::new();
            for seed in 0..4u64 {
                let rel = format!("ground_truth/{name}/{seed}.png");
                match source.generate(&format!("photo of {name}"), seed) {
                    Ok(crate::genpipe::GenerationOutcome::Image(bytes)) => {
                        write_atomic(&dir.join(&rel), &bytes).map_err(io_err(&rel))?
                    }
                    other => return Err(other_err(&rel, format!("{other:?}"))),
                }
                refs.push(rel);
            }
            artifacts.push(serde_json::json!({
                "name": name,
                "category": "Dumpling",
                "supercategory": "Food",
                "region": region,
                "continent": continent,
                "global_bucket": bucket,
                "ground_truth": refs,
            }));
        }
        write_json(&dir.join("dataset.json"), &serde_json::json!({ "artifacts": artifacts }))?;

        let mut gold = String::from("system,artifact,worker,question,likert,ranking,free_text\n");
        for (si, system) in ["mock-a", "mock-b"].into_iter().enumerate() {
            for (ai, (name, ..)) in ARTIFACTS.into_iter().enumerate() {
                for w in 0..3 {
                    for (qi, q) in ["CURE", "GT", "PS", "OFF", "STR"].into_iter().enumerate() {
                        let likert = 1 + (si + 2 * ai + w + qi) % 5;
                        let ranking = if q == "CURE" { ["abcd", "abdc", "bacd"][w] } else { "" };
                        gold.push_str(&format!("{system},{name},worker-{w},{q},{likert},{ranking},\n"));
                    }
                }
            }
        }
        write_atomic(&dir.join("gold.csv"), gold.as_bytes()).map_err(io_err("gold.csv"))?;
        write_json(&dir.join("elo.json"), &serde_json::json!({ "mock-a": 1010.0, "mock-b": 990.0 }))?;

        let mut shard = String::new();
        for i in 0..40 {
            shard.push_str(&format!("a plate of jiaozi on table {i}\n"));
        }
        for i in 0..3 {
            shard.push_str(&format!("homemade pierogi, batch {i}\n"));
        }
        for i in 0..120 {
            shard.push_str(&format!("ravioli with sage butter #{i}\n"));
        }
        shard.push_str("steamed momo and chutney\n");
        write_atomic(&dir.join("corpus/shard-0.txt"), shard.as_bytes()).map_err(io_err("corpus"))?;
        let config = dir.join("repbench.toml");
        write_atomic(&config, CONFIG.as_bytes()).map_err(io_err("repbench.toml"))?;
        Ok(config)
    }
}
