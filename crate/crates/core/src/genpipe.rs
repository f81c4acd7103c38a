//! Seeded image generation over pluggable text-to-image backends.
//!
//! Images are persisted create-once under
//! `<root>/<system>/<supercategory>/<artifact>/<style>/<seed>.png`; a refusal
//! is persisted as a `<seed>.refused` marker so a warm cache answers every
//! seed without calling the backend again. Transport failures are never
//! cached.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use image::{ImageFormat, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use crate::dataset::{label_key, ArtifactRecord};
use crate::prompts::{PromptError, PromptStyle, TemplateRegistry};
use crate::ratelimit::TokenBucket;
use crate::store::{path_segment, sha256_hex, write_atomic};

/// What a backend returns for one (prompt, seed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GenerationOutcome {
    /// Encoded image bytes (PNG).
    Image(Vec<u8>),
    /// The backend's safety filter declined the prompt.
    Refused { reason: Option<String> },
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend error: {0}")]
    Fatal(String),
}

/// Adapter contract for a text-to-image system.
pub trait T2IBackend: Send + Sync {
    fn system_id(&self) -> &str;

    /// Whether `generate` is deterministic in `(prompt, seed)`.
    fn supports_seed(&self) -> bool;

    /// Requests per minute; `None` means unbounded.
    fn rate_limit(&self) -> Option<u32> {
        None
    }

    fn version(&self) -> String {
        "unversioned".to_string()
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<GenerationOutcome, BackendError>;
}

impl<B: T2IBackend + ?Sized> T2IBackend for Box<B> {
    fn system_id(&self) -> &str {
        (**self).system_id()
    }

    fn supports_seed(&self) -> bool {
        (**self).supports_seed()
    }

    fn rate_limit(&self) -> Option<u32> {
        (**self).rate_limit()
    }

    fn version(&self) -> String {
        (**self).version()
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<GenerationOutcome, BackendError> {
        (**self).generate(prompt, seed)
    }
}

/// Seed counts per system.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeedPolicy {
    /// Seeds per benchmark style for systems not listed in `overrides`.
    pub default_seeds: usize,
    /// Seeds per style for systems matched by id (normalised, see [`system_key`]).
    pub overrides: Vec<(String, usize)>,
    /// Seeds for the category-only prompt used by the perceptual-similarity scorer.
    pub category_seeds: usize,
}

impl Default for SeedPolicy {
    fn default() -> Self {
        SeedPolicy {
            default_seeds: 4,
            overrides: vec![("sdxl".into(), 20), ("sd15".into(), 20)],
            category_seeds: 80,
        }
    }
}

/// Lower-cases and keeps alphanumerics, mapping the common long spellings of
/// the Stable Diffusion releases onto `sdxl` / `sd15`.
pub fn system_key(id: &str) -> String {
    let k: String = id
        .to_lowercase()
        .chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .collect();
    match k.as_str() {
        "stablediffusionxl" | "sdxl10" | "stablediffusionxl10" => "sdxl".into(),
        "stablediffusion15" | "sdv15" => "sd15".into(),
        _ => k,
    }
}

impl SeedPolicy {
    pub fn seeds_per_style(&self, system_id: &str) -> usize {
        let key = system_key(system_id);
        self.overrides
            .iter()
            .find(|(id, _)| system_key(id) == key)
            .map(|(_, n)| *n)
            .unwrap_or(self.default_seeds)
    }

    /// Seed list for one style. Category-only prompts get `category_seeds`.
    pub fn seeds(&self, system_id: &str, style: PromptStyle) -> Vec<u64> {
        let k = if style == PromptStyle::C {
            self.category_seeds
        } else {
            self.seeds_per_style(system_id)
        };
        default_seeds(k)
    }
}

/// `[0, 1, ..., k-1]`.
pub fn default_seeds(k: usize) -> Vec<u64> {
    (0..k as u64).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct GenerationEntry {
    pub seed: u64,
    /// Path relative to the image store root; `None` when refused or failed.
    pub image_ref: Option<String>,
    pub refused: bool,
    /// Transport failure after all retries (distinct from a refusal).
    #[serde(default)]
    pub failed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct GeneratedImageSet {
    pub system_id: String,
    pub artifact: String,
    pub supercategory: String,
    pub style: PromptStyle,
    pub entries: Vec<GenerationEntry>,
}

impl GeneratedImageSet {
    pub fn generated(&self) -> impl Iterator<Item = &GenerationEntry> {
        self.entries.iter().filter(|e| e.image_ref.is_some())
    }

    pub fn refused_count(&self) -> usize {
        self.entries.iter().filter(|e| e.refused).count()
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no seeds requested")]
    NoSeeds,
    #[error("image store I/O at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("acceptance rate undefined: no generation entries for supercategory `{0}`")]
    UndefinedRate(String),
}

/// Retry schedule for transport errors.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Create-once image store.
#[derive(Debug, Clone)]
pub struct ImageStore {
    root: PathBuf,
}

impl ImageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ImageStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Relative directory of one (system, artifact, style) job.
    pub fn job_dir(
        &self,
        system_id: &str,
        supercategory: &str,
        artifact: &str,
        style: PromptStyle,
    ) -> String {
        format!(
            "{}/{}/{}/{}",
            path_segment(system_id),
            path_segment(supercategory),
            path_segment(artifact),
            style.as_str()
        )
    }

    pub fn resolve(&self, image_ref: &str) -> PathBuf {
        self.root.join(image_ref)
    }
}

/// Drives one backend with retries and its rate limit.
pub struct Generator<'a> {
    backend: &'a dyn T2IBackend,
    store: ImageStore,
    templates: &'a TemplateRegistry,
    retry: RetryPolicy,
    limiter: TokenBucket,
}

impl<'a> Generator<'a> {
    pub fn new(backend: &'a dyn T2IBackend, store: ImageStore) -> Self {
        let limiter = backend
            .rate_limit()
            .map(TokenBucket::per_minute)
            .unwrap_or_else(TokenBucket::unlimited);
        Generator {
            backend,
            store,
            templates: TemplateRegistry::builtin(),
            retry: RetryPolicy::default(),
            limiter,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_templates(mut self, templates: &'a TemplateRegistry) -> Self {
        self.templates = templates;
        self
    }

    pub fn store(&self) -> &ImageStore {
        &self.store
    }

    /// Generates (or recalls from the store) one image per seed.
    pub fn generate_images(
        &self,
        artifact: &ArtifactRecord,
        style: PromptStyle,
        seeds: &[u64],
    ) -> Result<GeneratedImageSet, GenError> {
        if seeds.is_empty() {
            return Err(GenError::NoSeeds);
        }
        let prompt = self.templates.render_generation(artifact, style)?;
        self.generate_prompt(&artifact.name, &artifact.supercategory, style, &prompt, seeds)
    }

    /// Same as [`generate_images`](Self::generate_images) for an already
    /// rendered prompt. Category-only prompts use the category as `label`.
    pub fn generate_prompt(
        &self,
        label: &str,
        supercategory: &str,
        style: PromptStyle,
        prompt: &str,
        seeds: &[u64],
    ) -> Result<GeneratedImageSet, GenError> {
        if seeds.is_empty() {
            return Err(GenError::NoSeeds);
        }
        let dir = self
            .store
            .job_dir(self.backend.system_id(), supercategory, label, style);
        let mut entries = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            entries.push(self.one_seed(&dir, prompt, seed)?);
        }
        Ok(GeneratedImageSet {
            system_id: self.backend.system_id().to_string(),
            artifact: label.to_string(),
            supercategory: supercategory.to_string(),
            style,
            entries,
        })
    }

    fn one_seed(&self, dir: &str, prompt: &str, seed: u64) -> Result<GenerationEntry, GenError> {
        let image_ref = format!("{dir}/{seed}.png");
        let image_path = self.store.resolve(&image_ref);
        let refusal_path = self.store.resolve(&format!("{dir}/{seed}.refused"));
        if image_path.exists() {
            return Ok(GenerationEntry {
                seed,
                image_ref: Some(image_ref),
                refused: false,
                failed: false,
            });
        }
        if refusal_path.exists() {
            return Ok(GenerationEntry {
                seed,
                image_ref: None,
                refused: true,
                failed: false,
            });
        }

        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |source| GenError::Io { path, source }
        };
        let mut delay = self.retry.base_delay;
        for attempt in 1..=self.retry.attempts.max(1) {
            self.limiter.acquire();
            match self.backend.generate(prompt, seed) {
                Ok(GenerationOutcome::Image(bytes)) => {
                    write_atomic(&image_path, &bytes).map_err(io(&image_path))?;
                    return Ok(GenerationEntry {
                        seed,
                        image_ref: Some(image_ref),
                        refused: false,
                        failed: false,
                    });
                }
                Ok(GenerationOutcome::Refused { reason }) => {
                    let body = reason.unwrap_or_default();
                    write_atomic(&refusal_path, body.as_bytes()).map_err(io(&refusal_path))?;
                    return Ok(GenerationEntry {
                        seed,
                        image_ref: None,
                        refused: true,
                        failed: false,
                    });
                }
                Err(BackendError::Transport(msg)) if attempt < self.retry.attempts => {
                    debug!(seed, attempt, %msg, "transient backend failure, retrying");
                    std::thread::sleep(delay);
                    delay *= 2;
                }
                Err(e) => {
                    warn!(seed, prompt, error = %e, "generation failed");
                    break;
                }
            }
        }
        Ok(GenerationEntry {
            seed,
            image_ref: None,
            refused: false,
            failed: true,
        })
    }
}

/// Percentage of requested images that were generated for one supercategory:
/// `100 * generated / (artifacts * styles * seeds)`.
pub fn acceptance_rate(sets: &[GeneratedImageSet], supercategory: &str) -> Result<f64, GenError> {
    let key = label_key(supercategory);
    let (mut total, mut generated) = (0usize, 0usize);
    for set in sets.iter().filter(|s| label_key(&s.supercategory) == key) {
        total += set.entries.len();
        generated += set.generated().count();
    }
    if total == 0 {
        return Err(GenError::UndefinedRate(supercategory.to_string()));
    }
    Ok(100.0 * generated as f64 / total as f64)
}

/// Wraps a backend that has no seed parameter by appending the seed to the
/// prompt. Determinism is best effort and depends on the wrapped service.
pub struct SeedInPrompt<B> {
    inner: B,
}

impl<B: T2IBackend> SeedInPrompt<B> {
    pub fn new(inner: B) -> Self {
        SeedInPrompt { inner }
    }

    pub fn seeded_prompt(prompt: &str, seed: u64) -> String {
        format!("{prompt} (random seed: {seed})")
    }
}

impl<B: T2IBackend> T2IBackend for SeedInPrompt<B> {
    fn system_id(&self) -> &str {
        self.inner.system_id()
    }

    fn supports_seed(&self) -> bool {
        false
    }

    fn rate_limit(&self) -> Option<u32> {
        self.inner.rate_limit()
    }

    fn version(&self) -> String {
        format!("{}+seed-in-prompt", self.inner.version())
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<GenerationOutcome, BackendError> {
        self.inner.generate(&Self::seeded_prompt(prompt, seed), 0)
    }
}

/// Which prompts a [`MockBackend`] refuses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RefusalPattern {
    #[default]
    Never,
    Always,
    /// Refuses when `seed % n == n - 1`.
    EveryNthSeed(u64),
    /// Refuses prompts containing any of these substrings (case-insensitive).
    PromptContains(Vec<String>),
}

/// Deterministic synthetic backend: a small PNG whose base colour depends on
/// the prompt and whose texture depends on (prompt, seed).
pub struct MockBackend {
    id: String,
    refusal: RefusalPattern,
    size: u32,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(id: impl Into<String>) -> Self {
        MockBackend {
            id: id.into(),
            refusal: RefusalPattern::Never,
            size: 16,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_refusal(mut self, refusal: RefusalPattern) -> Self {
        self.refusal = refusal;
        self
    }

    pub fn with_size(mut self, size: u32) -> Self {
        self.size = size.max(1);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn refuses(&self, prompt: &str, seed: u64) -> bool {
        match &self.refusal {
            RefusalPattern::Never => false,
            RefusalPattern::Always => true,
            RefusalPattern::EveryNthSeed(n) => *n > 0 && seed % n == n - 1,
            RefusalPattern::PromptContains(words) => {
                let p = prompt.to_lowercase();
                words.iter().any(|w| p.contains(&w.to_lowercase()))
            }
        }
    }
}

/// Deterministic byte stream from SHA-256 in counter mode.
pub(crate) fn hash_stream(seed: &str, len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(len + 32);
    let mut counter = 0u64;
    while out.len() < len {
        let block = sha256_hex(format!("{seed}#{counter}").as_bytes());
        out.extend(hex::decode(block).expect("hex digest"));
        counter += 1;
    }
    out.truncate(len);
    out
}

pub(crate) fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .expect("in-memory PNG encoding");
    buf.into_inner()
}

impl T2IBackend for MockBackend {
    fn system_id(&self) -> &str {
        &self.id
    }

    fn supports_seed(&self) -> bool {
        true
    }

    fn version(&self) -> String {
        "mock-1".to_string()
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<GenerationOutcome, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if self.refuses(prompt, seed) {
            return Ok(GenerationOutcome::Refused {
                reason: Some("mock safety filter".into()),
            });
        }
        let base = hash_stream(prompt, 3);
        let n = (self.size * self.size * 3) as usize;
        let noise = hash_stream(&format!("{prompt}|{seed}"), n);
        let pixels: Vec<u8> = noise
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let b = base[i % 3] as u32;
                ((b * 3 + v as u32) / 4) as u8
            })
            .collect();
        let img = RgbImage::from_raw(self.size, self.size, pixels).expect("buffer size");
        Ok(GenerationOutcome::Image(encode_png(&img)))
    }
}

/// Backend that shells out to an external program. The program receives the
/// prompt and seed in `T2I_PROMPT` / `T2I_SEED`, writes PNG bytes to stdout,
/// and exits with status 3 to signal a safety refusal. Any other non-zero
/// status is treated as a transport error.
pub struct CommandBackend {
    id: String,
    program: String,
    args: Vec<String>,
    rate_limit: Option<u32>,
}

impl CommandBackend {
    pub const REFUSAL_EXIT: i32 = 3;

    pub fn new(id: impl Into<String>, program: impl Into<String>, args: Vec<String>) -> Self {
        CommandBackend {
            id: id.into(),
            program: program.into(),
            args,
            rate_limit: None,
        }
    }

    pub fn with_rate_limit(mut self, per_minute: Option<u32>) -> Self {
        self.rate_limit = per_minute;
        self
    }
}

impl T2IBackend for CommandBackend {
    fn system_id(&self) -> &str {
        &self.id
    }

    fn supports_seed(&self) -> bool {
        true
    }

    fn rate_limit(&self) -> Option<u32> {
        self.rate_limit
    }

    fn version(&self) -> String {
        format!("command:{}", self.program)
    }

    fn generate(&self, prompt: &str, seed: u64) -> Result<GenerationOutcome, BackendError> {
        let out = Command::new(&self.program)
            .args(&self.args)
            .env("T2I_PROMPT", prompt)
            .env("T2I_SEED", seed.to_string())
            .output()
            .map_err(|e| BackendError::Fatal(format!("spawn {}: {e}", self.program)))?;
        match out.status.code() {
            Some(0) => Ok(GenerationOutcome::Image(out.stdout)),
            Some(Self::REFUSAL_EXIT) => Ok(GenerationOutcome::Refused {
                reason: Some(String::from_utf8_lossy(&out.stderr).trim().to_string()),
            }),
            code => Err(BackendError::Transport(format!(
                "{} exited with {:?}: {}",
                self.program,
                code,
                String::from_utf8_lossy(&out.stderr).trim()
            ))),
        }
    }
}

/// Loads a generation manifest (JSON array of [`GeneratedImageSet`]).
pub fn load_manifest(path: &Path) -> Result<Vec<GeneratedImageSet>, GenError> {
    let text = fs::read_to_string(path).map_err(|source| GenError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| GenError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}
