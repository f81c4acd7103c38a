//! Image and text embeddings, their on-disk cache, and the set-level cosine
//! similarity shared by every scorer.
//!
//! Cache layout under the cache root:
//!
//! ```text
//! <encoder>/<system>/<artifact>/<style>.f32   raw little-endian f32 rows
//! <vlm>/_text/<sha256(prompt)>.f32            one text vector
//! manifest.json                               dims, rows, encoder version, input hash
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::genpipe::hash_stream;
use crate::store::{path_segment, sha256_hex, write_atomic};

/// Allowed deviation of a stored row's L2 norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("empty embedding set {0}")]
    EmptySet(String),
    #[error("zero vector cannot be normalised")]
    ZeroVector,
    #[error("centroid of {0} is the zero vector")]
    DegenerateCentroid(String),
    #[error("encoder `{encoder}` failed: {message}")]
    Encoder { encoder: String, message: String },
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("embedding spaces differ: `{0}` vs `{1}`")]
    SpaceMismatch(String, String),
    #[error("cache I/O at {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

/// Identifies an embedding set: which images, encoded by which model.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EmbeddingKey {
    pub system_id: String,
    pub artifact: String,
    /// Prompt style, or `GT` for ground-truth images.
    pub style: String,
    pub encoder_id: String,
}

impl EmbeddingKey {
    pub fn new(system_id: &str, artifact: &str, style: &str, encoder_id: &str) -> Self {
        EmbeddingKey {
            system_id: system_id.into(),
            artifact: artifact.into(),
            style: style.into(),
            encoder_id: encoder_id.into(),
        }
    }

    fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.encoder_id, self.system_id, self.artifact, self.style
        )
    }

    /// Path of the rows file relative to the cache root.
    pub fn rel_path(&self) -> String {
        format!(
            "{}/{}/{}/{}.f32",
            path_segment(&self.encoder_id),
            path_segment(&self.system_id),
            path_segment(&self.artifact),
            path_segment(&self.style)
        )
    }
}

/// Unit-norm rows, one per non-refused image.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub key: EmbeddingKey,
    dim: usize,
    data: Vec<f32>,
}

fn normalize(v: &[f32]) -> Result<Vec<f32>, EmbedError> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(EmbedError::ZeroVector);
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

impl EmbeddingSet {
    pub fn empty(key: EmbeddingKey, dim: usize) -> Self {
        EmbeddingSet {
            key,
            dim,
            data: Vec::new(),
        }
    }

    /// L2-normalises every row.
    pub fn from_rows(key: EmbeddingKey, rows: &[Vec<f32>]) -> Result<Self, EmbedError> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(dim * rows.len());
        for r in rows {
            if r.len() != dim {
                return Err(EmbedError::DimensionMismatch(dim, r.len()));
            }
            data.extend(normalize(r)?);
        }
        Ok(EmbeddingSet { key, dim, data })
    }

    fn from_raw(key: EmbeddingKey, dim: usize, data: Vec<f32>) -> Self {
        EmbeddingSet { key, dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    /// A one-row set holding row `i`.
    pub fn single(&self, i: usize) -> EmbeddingSet {
        EmbeddingSet::from_raw(self.key.clone(), self.dim, self.row(i).to_vec())
    }

    /// Concatenates sets that share a dimension.
    pub fn concat(key: EmbeddingKey, sets: &[&EmbeddingSet]) -> Result<EmbeddingSet, EmbedError> {
        let dim = sets.iter().find(|s| !s.is_empty()).map(|s| s.dim).unwrap_or(0);
        let mut data = Vec::new();
        for s in sets.iter().filter(|s| !s.is_empty()) {
            if s.dim != dim {
                return Err(EmbedError::DimensionMismatch(dim, s.dim));
            }
            data.extend_from_slice(&s.data);
        }
        Ok(EmbeddingSet::from_raw(key, dim, data))
    }

    /// Arithmetic mean of the rows, in f64.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0f64; self.dim];
        for r in self.rows() {
            for (acc, &x) in m.iter_mut().zip(r) {
                *acc += f64::from(x);
            }
        }
        let n = self.len() as f64;
        m.iter_mut().for_each(|x| *x /= n);
        m
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    fn from_le_bytes(key: EmbeddingKey, dim: usize, bytes: &[u8]) -> Option<Self> {
        if bytes.is_empty() {
            return Some(EmbeddingSet::empty(key, dim));
        }
        if dim == 0 || !bytes.len().is_multiple_of(4 * dim) {
            return None;
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Some(EmbeddingSet::from_raw(key, dim, data))
    }
}

/// How two embedding sets are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SimilarityMode {
    /// Mean cosine over all |A|×|B| cross pairs.
    #[default]
    SetMeanPairwise,
    /// Cosine of the two renormalised mean vectors.
    Centroid,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Set-level cosine similarity in [-1, 1].
///
/// Rows are unit norm, so the mean of all cross-pair cosines equals the dot
/// product of the two mean vectors; both modes therefore cost O((|A|+|B|)·d).
pub fn cosine_set_similarity(
    a: &EmbeddingSet,
    b: &EmbeddingSet,
    mode: SimilarityMode,
) -> Result<f64, EmbedError> {
    if a.is_empty() {
        return Err(EmbedError::EmptySet(a.key.label()));
    }
    if b.is_empty() {
        return Err(EmbedError::EmptySet(b.key.label()));
    }
    if a.dim != b.dim {
        return Err(EmbedError::DimensionMismatch(a.dim, b.dim));
    }
    let (ma, mb) = (a.mean(), b.mean());
    let s = match mode {
        SimilarityMode::SetMeanPairwise => dot(&ma, &mb),
        SimilarityMode::Centroid => {
            let (na, nb) = (dot(&ma, &ma).sqrt(), dot(&mb, &mb).sqrt());
            if na < 1e-12 {
                return Err(EmbedError::DegenerateCentroid(a.key.label()));
            }
            if nb < 1e-12 {
                return Err(EmbedError::DegenerateCentroid(b.key.label()));
            }
            dot(&ma, &mb) / (na * nb)
        }
    };
    Ok(s.clamp(-1.0, 1.0))
}

/// A unit-norm text embedding tagged with the model that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding {
    pub vlm_id: String,
    pub vector: Vec<f32>,
}

impl TextEmbedding {
    pub fn as_set(&self) -> EmbeddingSet {
        EmbeddingSet::from_raw(
            EmbeddingKey::new("_text", "_", "_", &self.vlm_id),
            self.vector.len(),
            self.vector.clone(),
        )
    }
}

/// Similarity of an image set to a single text embedding in a shared space.
pub fn image_text_similarity(
    images: &EmbeddingSet,
    text: &TextEmbedding,
    mode: SimilarityMode,
) -> Result<f64, EmbedError> {
    if images.key.encoder_id != text.vlm_id {
        return Err(EmbedError::SpaceMismatch(
            images.key.encoder_id.clone(),
            text.vlm_id.clone(),
        ));
    }
    cosine_set_similarity(images, &text.as_set(), mode)
}

/// Batch image encoder adapter.
pub trait ImageEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn version(&self) -> String;
    fn encode(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>, String>;
}

/// Vision-language model adapter: images and text in one space.
pub trait VisionLanguageModel: Send + Sync {
    fn id(&self) -> &str;
    fn version(&self) -> String;
    fn embed_images(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>, String>;
    fn embed_text(&self, text: &str) -> Result<Vec<f32>, String>;
}

/// Uses a VLM's image tower as an [`ImageEncoder`].
pub struct VlmImageEncoder<'a>(pub &'a dyn VisionLanguageModel);

impl ImageEncoder for VlmImageEncoder<'_> {
    fn id(&self) -> &str {
        self.0.id()
    }
    fn version(&self) -> String {
        self.0.version()
    }
    fn encode(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>, String> {
        self.0.embed_images(images)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub dims: usize,
    pub rows: usize,
    pub encoder_version: String,
    /// Hash of the input image list (or prompt), so changed inputs miss.
    pub input_hash: String,
    pub content_sha256: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped: Vec<SkipRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct SkipRecord {
    pub image: String,
    pub reason: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    entries: BTreeMap<String, ManifestEntry>,
}

/// On-disk embedding cache. Reads are plain file reads; each write goes
/// through a temp file and an atomic rename.
#[derive(Debug)]
pub struct EmbeddingCache {
    root: PathBuf,
    manifest: Mutex<Manifest>,
}

impl EmbeddingCache {
    pub const MANIFEST: &'static str = "manifest.json";

    pub fn open(root: impl Into<PathBuf>) -> Result<Self, EmbedError> {
        let root = root.into();
        let mpath = root.join(Self::MANIFEST);
        let manifest = match fs::read_to_string(&mpath) {
            Ok(text) => serde_json::from_str(&text).map_err(|e| EmbedError::Cache {
                path: mpath.clone(),
                message: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Manifest::default(),
            Err(e) => {
                return Err(EmbedError::Cache {
                    path: mpath,
                    message: e.to_string(),
                })
            }
        };
        Ok(EmbeddingCache {
            root,
            manifest: Mutex::new(manifest),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.lock().expect("manifest lock").entries.is_empty()
    }

    pub fn entry(&self, rel: &str) -> Option<ManifestEntry> {
        self.manifest
            .lock()
            .expect("manifest lock")
            .entries
            .get(rel)
            .cloned()
    }

    fn read(&self, key: &EmbeddingKey, rel: &str, version: &str, input_hash: &str) -> Option<(EmbeddingSet, Vec<SkipRecord>)> {
        let entry = self.entry(rel)?;
        if entry.encoder_version != version || entry.input_hash != input_hash {
            return None;
        }
        let bytes = fs::read(self.root.join(rel)).ok()?;
        if sha256_hex(&bytes) != entry.content_sha256 {
            warn!(rel, "embedding cache content hash mismatch, recomputing");
            return None;
        }
        let set = EmbeddingSet::from_le_bytes(key.clone(), entry.dims, &bytes)?;
        (set.len() == entry.rows).then_some((set, entry.skipped))
    }

    fn write(
        &self,
        rel: &str,
        set: &EmbeddingSet,
        version: &str,
        input_hash: &str,
        skipped: &[SkipRecord],
    ) -> Result<(), EmbedError> {
        let bytes = set.to_le_bytes();
        let path = self.root.join(rel);
        write_atomic(&path, &bytes).map_err(|e| EmbedError::Cache {
            path: path.clone(),
            message: e.to_string(),
        })?;
        let mut m = self.manifest.lock().expect("manifest lock");
        m.entries.insert(
            rel.to_string(),
            ManifestEntry {
                dims: set.dim,
                rows: set.len(),
                encoder_version: version.to_string(),
                input_hash: input_hash.to_string(),
                content_sha256: sha256_hex(&bytes),
                skipped: skipped.to_vec(),
            },
        );
        let text = serde_json::to_string_pretty(&*m).expect("manifest serializes");
        let mpath = self.root.join(Self::MANIFEST);
        write_atomic(&mpath, text.as_bytes()).map_err(|e| EmbedError::Cache {
            path: mpath,
            message: e.to_string(),
        })
    }

    /// Loads a cached set by key without an input check.
    pub fn load(&self, key: &EmbeddingKey) -> Option<EmbeddingSet> {
        let rel = key.rel_path();
        let entry = self.entry(&rel)?;
        let bytes = fs::read(self.root.join(&rel)).ok()?;
        EmbeddingSet::from_le_bytes(key.clone(), entry.dims, &bytes)
    }
}

/// Result of [`embed_images`].
#[derive(Debug, Clone)]
pub struct EmbedOutcome {
    pub set: EmbeddingSet,
    pub skipped: Vec<SkipRecord>,
    pub cache_hit: bool,
}

/// Encodes images into a unit-norm [`EmbeddingSet`]. Undecodable images are
/// skipped and reported; an encoder failure aborts the call.
pub fn embed_images(
    encoder: &dyn ImageEncoder,
    cache: Option<&EmbeddingCache>,
    key: EmbeddingKey,
    images: &[PathBuf],
) -> Result<EmbedOutcome, EmbedError> {
    let rel = key.rel_path();
    let version = encoder.version();
    let input_hash = sha256_hex(
        images
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("\n")
            .as_bytes(),
    );
    if let Some(c) = cache {
        if let Some((set, skipped)) = c.read(&key, &rel, &version, &input_hash) {
            return Ok(EmbedOutcome {
                set,
                skipped,
                cache_hit: true,
            });
        }
    }

    let mut decoded = Vec::with_capacity(images.len());
    let mut skipped = Vec::new();
    for p in images {
        match image::open(p) {
            Ok(img) => decoded.push(img.to_rgb8()),
            Err(e) => skipped.push(SkipRecord {
                image: p.to_string_lossy().into_owned(),
                reason: format!("decode: {e}"),
            }),
        }
    }
    let set = if decoded.is_empty() {
        EmbeddingSet::empty(key, 0)
    } else {
        let rows = encoder.encode(&decoded).map_err(|message| EmbedError::Encoder {
            encoder: encoder.id().to_string(),
            message,
        })?;
        if rows.len() != decoded.len() {
            return Err(EmbedError::Encoder {
                encoder: encoder.id().to_string(),
                message: format!("returned {} rows for {} images", rows.len(), decoded.len()),
            });
        }
        EmbeddingSet::from_rows(key, &rows)?
    };
    if let Some(c) = cache {
        c.write(&rel, &set, &version, &input_hash, &skipped)?;
    }
    Ok(EmbedOutcome {
        set,
        skipped,
        cache_hit: false,
    })
}

/// Embeds a prompt with a VLM, cached by (vlm, prompt hash).
pub fn embed_text(
    vlm: &dyn VisionLanguageModel,
    cache: Option<&EmbeddingCache>,
    prompt: &str,
) -> Result<TextEmbedding, EmbedError> {
    if prompt.trim().is_empty() {
        return Err(EmbedError::EmptyPrompt);
    }
    let hash = sha256_hex(prompt.as_bytes());
    let key = EmbeddingKey::new("_text", &hash, "text", vlm.id());
    let rel = format!("{}/_text/{hash}.f32", path_segment(vlm.id()));
    let version = vlm.version();
    if let Some(c) = cache {
        if let Some((set, _)) = c.read(&key, &rel, &version, &hash) {
            return Ok(TextEmbedding {
                vlm_id: vlm.id().to_string(),
                vector: set.row(0).to_vec(),
            });
        }
    }
    let raw = vlm.embed_text(prompt).map_err(|message| EmbedError::Encoder {
        encoder: vlm.id().to_string(),
        message,
    })?;
    let vector = normalize(&raw)?;
    if let Some(c) = cache {
        let set = EmbeddingSet::from_raw(key, vector.len(), vector.clone());
        c.write(&rel, &set, &version, &hash, &[])?;
    }
    Ok(TextEmbedding {
        vlm_id: vlm.id().to_string(),
        vector,
    })
}

/// Cache-relative path of a text embedding (exposed for tests and tooling).
pub fn text_cache_path(vlm_id: &str, prompt: &str) -> String {
    format!("{}/_text/{}.f32", path_segment(vlm_id), sha256_hex(prompt.as_bytes()))
}

/// Deterministic stand-in encoder: mean-centred colour averages over a
/// `grid × grid` partition of the image.
pub struct MockImageEncoder {
    id: String,
    grid: u32,
    calls: AtomicUsize,
}

impl MockImageEncoder {
    pub fn new(id: impl Into<String>) -> Self {
        MockImageEncoder {
            id: id.into(),
            grid: 4,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn dim(&self) -> usize {
        (self.grid * self.grid * 3) as usize
    }

    fn features(&self, img: &RgbImage) -> Vec<f32> {
        let g = self.grid;
        let (w, h) = img.dimensions();
        let mut sums = vec![0.0f64; (g * g * 3) as usize];
        let mut counts = vec![0u32; (g * g) as usize];
        for (x, y, p) in img.enumerate_pixels() {
            let cell = ((y * g / h.max(1)) * g + x * g / w.max(1)) as usize;
            counts[cell] += 1;
            for c in 0..3 {
                sums[cell * 3 + c] += f64::from(p.0[c]);
            }
        }
        let mut v: Vec<f32> = sums
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let n = counts[i / 3].max(1);
                (s / f64::from(n) / 255.0 - 0.5) as f32
            })
            .collect();
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        v
    }
}

impl ImageEncoder for MockImageEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn version(&self) -> String {
        format!("mock-grid{}", self.grid)
    }

    fn encode(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>, String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(images.iter().map(|i| self.features(i)).collect())
    }
}

/// Deterministic stand-in VLM: images through [`MockImageEncoder`], text
/// through a hash of the prompt.
pub struct MockVlm {
    inner: MockImageEncoder,
    text_calls: AtomicUsize,
}

impl MockVlm {
    pub fn new(id: impl Into<String>) -> Self {
        MockVlm {
            inner: MockImageEncoder::new(id),
            text_calls: AtomicUsize::new(0),
        }
    }

    pub fn text_calls(&self) -> usize {
        self.text_calls.load(Ordering::SeqCst)
    }
}

impl VisionLanguageModel for MockVlm {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn version(&self) -> String {
        format!("mock-vlm-{}", self.inner.version())
    }

    fn embed_images(&self, images: &[RgbImage]) -> Result<Vec<Vec<f32>>, String> {
        self.inner.encode(images)
    }

    fn embed_text(&self, text: &str) -> Result<Vec<f32>, String> {
        self.text_calls.fetch_add(1, Ordering::SeqCst);
        Ok(hash_stream(text, self.inner.dim())
            .into_iter()
            .map(|b| f32::from(b) / 255.0 - 0.5)
            .collect())
    }
}
