//! Candidate artifacts from MediaWiki "<category> by country" trees.
//!
//! The tree is read as: `<category> by country` → one subcategory per country
//! (`Dumplings of Poland`) → one subcategory per named entity (`Pierogi`),
//! whose files are the ground-truth images. Every raw response can be
//! recorded to a fixture directory (one file per request URL hash) and
//! replayed offline.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::{debug, warn};
use url::Url;

use crate::dataset::{ArtifactRecord, MIN_GROUND_TRUTH};
use crate::regions::RegionTable;
use crate::store::{path_segment, sha256_hex, write_atomic};

pub const COMMONS_API: &str = "https://commons.wikimedia.org/w/api.php";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponseKind {
    /// API response, stored as `<hash>.json`.
    Json,
    /// Media bytes, stored as `<hash>.bin`.
    Media,
}

impl ResponseKind {
    fn ext(self) -> &'static str {
        match self {
            ResponseKind::Json => "json",
            ResponseKind::Media => "bin",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    /// Worth retrying.
    #[error("transport: {0}")]
    Transient(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("no fixture for {0}")]
    MissingFixture(String),
}

/// Fetches a URL.
pub trait Transport: Send + Sync {
    fn fetch(&self, url: &str, kind: ResponseKind) -> Result<Vec<u8>, TransportError>;
}

/// Fixture file name for a request URL.
pub fn fixture_name(url: &str, kind: ResponseKind) -> String {
    format!("{}.{}", sha256_hex(url.as_bytes()), kind.ext())
}

/// Replays recorded responses.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureTransport { dir: dir.into() }
    }

    /// Writes a fixture (used to build test corpora).
    pub fn record(&self, url: &str, kind: ResponseKind, body: &[u8]) -> std::io::Result<()> {
        write_atomic(&self.dir.join(fixture_name(url, kind)), body)
    }
}

impl Transport for FixtureTransport {
    fn fetch(&self, url: &str, kind: ResponseKind) -> Result<Vec<u8>, TransportError> {
        std::fs::read(self.dir.join(fixture_name(url, kind)))
            .map_err(|_| TransportError::MissingFixture(url.to_string()))
    }
}

/// Wraps a transport and stores every successful response as a fixture.
pub struct RecordingTransport<T> {
    inner: T,
    fixtures: FixtureTransport,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Self {
        RecordingTransport {
            inner,
            fixtures: FixtureTransport::new(dir),
        }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn fetch(&self, url: &str, kind: ResponseKind) -> Result<Vec<u8>, TransportError> {
        let body = self.inner.fetch(url, kind)?;
        if let Err(e) = self.fixtures.record(url, kind, &body) {
            warn!(url, error = %e, "could not record fixture");
        }
        Ok(body)
    }
}

#[cfg(feature = "http")]
pub use http::HttpTransport;

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use super::{ResponseKind, Transport, TransportError};
    use crate::ratelimit::TokenBucket;

    /// Live HTTP with a per-host token bucket and retries on transient
    /// failures.
    pub struct HttpTransport {
        client: reqwest::blocking::Client,
        limiter: TokenBucket,
        attempts: u32,
        base_delay: Duration,
    }

    impl HttpTransport {
        pub fn new(user_agent: &str, requests_per_sec: f64) -> Result<Self, TransportError> {
            let client = reqwest::blocking::Client::builder()
                .user_agent(user_agent)
                .timeout(Duration::from_secs(60))
                .build()
                .map_err(|e| TransportError::Transient(e.to_string()))?;
            Ok(HttpTransport {
                client,
                limiter: TokenBucket::new(requests_per_sec, 1),
                attempts: 3,
                base_delay: Duration::from_secs(1),
            })
        }

        fn once(&self, url: &str) -> Result<Vec<u8>, TransportError> {
            self.limiter.acquire();
            let resp = self
                .client
                .get(url)
                .send()
                .map_err(|e| TransportError::Transient(e.to_string()))?;
            let status = resp.status();
            if status.as_u16() == 404 {
                return Err(TransportError::NotFound(url.to_string()));
            }
            if !status.is_success() {
                return Err(TransportError::Transient(format!("HTTP {status} for {url}")));
            }
            resp.bytes()
                .map(|b| b.to_vec())
                .map_err(|e| TransportError::Transient(e.to_string()))
        }
    }

    impl Transport for HttpTransport {
        fn fetch(&self, url: &str, _kind: ResponseKind) -> Result<Vec<u8>, TransportError> {
            let mut delay = self.base_delay;
            let mut last = None;
            for attempt in 1..=self.attempts {
                match self.once(url) {
                    Err(TransportError::Transient(msg)) => {
                        tracing::debug!(url, attempt, %msg, "retrying");
                        last = Some(TransportError::Transient(msg));
                        if attempt < self.attempts {
                            std::thread::sleep(delay);
                            delay *= 2;
                        }
                    }
                    other => return other,
                }
            }
            Err(last.expect("at least one attempt"))
        }
    }
}

#[derive(Debug, Error)]
pub enum CrawlError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("category not found: {0}")]
    CategoryNotFound(String),
    #[error("unexpected API response for {url}: {message}")]
    Parse { url: String, message: String },
    #[error("{artifact}: {available} usable images, need {needed}")]
    BelowThreshold {
        artifact: String,
        available: usize,
        needed: usize,
        failures: Vec<DownloadFailure>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid crawl spec: {0}")]
    Spec(String),
}

/// Thin MediaWiki API client.
pub struct WikiClient<'a> {
    transport: &'a dyn Transport,
    api: Url,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MemberType {
    Subcat,
    File,
}

impl<'a> WikiClient<'a> {
    pub fn new(transport: &'a dyn Transport) -> Self {
        Self::with_api(transport, Url::parse(COMMONS_API).expect("valid API url"))
    }

    pub fn with_api(transport: &'a dyn Transport, api: Url) -> Self {
        WikiClient { transport, api }
    }

    fn query(&self, params: &[(&str, &str)]) -> Result<Value, CrawlError> {
        let mut url = self.api.clone();
        url.query_pairs_mut()
            .append_pair("format", "json")
            .append_pair("formatversion", "2")
            .extend_pairs(params.iter().copied());
        let url = url.to_string();
        debug!(%url, "query");
        let body = self.transport.fetch(&url, ResponseKind::Json)?;
        serde_json::from_slice(&body).map_err(|e| CrawlError::Parse {
            url,
            message: e.to_string(),
        })
    }

    pub fn media_url(&self, url: &str) -> Result<Vec<u8>, TransportError> {
        self.transport.fetch(url, ResponseKind::Media)
    }

    /// Whether a page exists.
    pub fn exists(&self, title: &str) -> Result<bool, CrawlError> {
        let v = self.query(&[("action", "query"), ("titles", title)])?;
        let pages = v["query"]["pages"].as_array().cloned().unwrap_or_default();
        Ok(pages.iter().any(|p| !p["missing"].as_bool().unwrap_or(false) && !p["invalid"].as_bool().unwrap_or(false)))
    }

    /// All member titles of a category, following continuation.
    pub fn category_members(&self, title: &str, kind: MemberType) -> Result<Vec<String>, CrawlError> {
        let cmtype = match kind {
            MemberType::Subcat => "subcat",
            MemberType::File => "file",
        };
        let mut out = Vec::new();
        let mut cont: Option<String> = None;
        loop {
            let mut params = vec![
                ("action", "query"),
                ("list", "categorymembers"),
                ("cmtitle", title),
                ("cmtype", cmtype),
                ("cmlimit", "500"),
            ];
            if let Some(c) = &cont {
                params.push(("cmcontinue", c.as_str()));
            }
            let v = self.query(&params)?;
            let members = v["query"]["categorymembers"].as_array().ok_or_else(|| CrawlError::Parse {
                url: title.to_string(),
                message: "no query.categorymembers".into(),
            })?;
            out.extend(members.iter().filter_map(|m| m["title"].as_str().map(str::to_string)));
            match v["continue"]["cmcontinue"].as_str() {
                Some(c) => cont = Some(c.to_string()),
                None => break,
            }
        }
        Ok(out)
    }

    /// Original-file URLs for `File:` titles (batched 50 per request).
    pub fn image_urls(&self, files: &[String]) -> Result<BTreeMap<String, String>, CrawlError> {
        let mut out = BTreeMap::new();
        for chunk in files.chunks(50) {
            let titles = chunk.join("|");
            let v = self.query(&[
                ("action", "query"),
                ("prop", "imageinfo"),
                ("iiprop", "url"),
                ("titles", &titles),
            ])?;
            for p in v["query"]["pages"].as_array().into_iter().flatten() {
                if let (Some(t), Some(u)) = (p["title"].as_str(), p["imageinfo"][0]["url"].as_str()) {
                    out.insert(t.to_string(), u.to_string());
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlSpec {
    pub supercategory: String,
    /// Category label written into candidate records.
    pub category: String,
    /// Title of the root category; `{category}` is replaced by `category`.
    #[serde(default = "default_pattern")]
    pub category_pattern: String,
    #[serde(default = "default_min_images")]
    pub min_images: usize,
    #[serde(default)]
    pub max_artifacts: Option<usize>,
}

fn default_pattern() -> String {
    "{category} by country".into()
}

fn default_min_images() -> usize {
    MIN_GROUND_TRUTH
}

impl CrawlSpec {
    pub fn root_title(&self) -> String {
        let t = self.category_pattern.replace("{category}", &self.category);
        if t.starts_with("Category:") {
            t
        } else {
            format!("Category:{t}")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub entry: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrawlResult {
    pub candidates: Vec<ArtifactRecord>,
    pub skipped: Vec<Skipped>,
    /// Candidates awaiting a manual ambiguity decision.
    pub review: Vec<String>,
}

fn strip_ns(title: &str) -> &str {
    title.split_once(':').map_or(title, |(_, t)| t)
}

/// Country named at the end of a subcategory title
/// (`... of Poland`, `... in the United States`, `... from Ghana`).
pub fn country_from_title(title: &str) -> Option<String> {
    let t = strip_ns(title);
    let idx = [" of ", " in ", " from "]
        .iter()
        .filter_map(|sep| t.rfind(sep).map(|i| i + sep.len()))
        .max()?;
    let c = t[idx..].trim();
    let c = c.strip_prefix("the ").unwrap_or(c);
    (!c.is_empty()).then(|| c.to_string())
}

/// Walks the country subcategories of one category.
pub fn crawl_category(spec: &CrawlSpec, client: &WikiClient<'_>) -> Result<CrawlResult, CrawlError> {
    if spec.min_images == 0 {
        return Err(CrawlError::Spec("min_images must be at least 1".into()));
    }
    let root = spec.root_title();
    if !client.exists(&root)? {
        return Err(CrawlError::CategoryNotFound(root));
    }
    let regions = RegionTable::builtin();
    let mut result = CrawlResult::default();
    let mut seen = BTreeSet::new();
    let mut candidates = Vec::new();
    for country_cat in client.category_members(&root, MemberType::Subcat)? {
        let info = country_from_title(&country_cat).and_then(|c| regions.lookup(&c));
        let Some(info) = info else {
            result.skipped.push(Skipped {
                entry: country_cat,
                reason: "unknown-region".into(),
            });
            continue;
        };
        let entities = client.category_members(&country_cat, MemberType::Subcat)?;
        if entities.is_empty() {
            result.skipped.push(Skipped {
                entry: country_cat,
                reason: "no-named-entities".into(),
            });
            continue;
        }
        for entity in entities {
            let files = client.category_members(&entity, MemberType::File)?;
            let name = strip_ns(&entity).to_string();
            if files.len() < spec.min_images {
                result.skipped.push(Skipped {
                    entry: entity,
                    reason: "insufficient-images".into(),
                });
                continue;
            }
            if !seen.insert(name.to_lowercase()) {
                result.skipped.push(Skipped {
                    entry: entity,
                    reason: "duplicate-name".into(),
                });
                continue;
            }
            candidates.push(ArtifactRecord {
                name,
                category: spec.category.clone(),
                supercategory: spec.supercategory.clone(),
                region: info.country.clone(),
                continent: info.continent.clone(),
                global_bucket: info.bucket,
                ground_truth: files,
                ambiguous: None,
            });
        }
    }
    candidates.sort_by(|a, b| (&a.region, &a.name).cmp(&(&b.region, &b.name)));
    if let Some(max) = spec.max_artifacts {
        for c in candidates.drain(max.min(candidates.len())..) {
            result.skipped.push(Skipped {
                entry: c.name,
                reason: "max-artifacts".into(),
            });
        }
    }
    result.review = candidates.iter().map(|c| c.name.clone()).collect();
    result.candidates = candidates;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownloadFailure {
    pub source: String,
    pub reason: String,
}

fn extension_of(url: &str) -> String {
    let last = url.rsplit('/').next().unwrap_or("");
    match last.rsplit_once('.') {
        Some((_, ext)) if !ext.is_empty() && ext.len() <= 5 && ext.chars().all(|c| c.is_ascii_alphanumeric()) => {
            ext.to_ascii_lowercase()
        }
        _ => "img".into(),
    }
}

/// Downloads up to `k` ground-truth images into `cache_dir` and returns the
/// record with local paths. Fails if fewer than the minimum could be fetched.
pub fn fetch_ground_truth(
    record: &ArtifactRecord,
    client: &WikiClient<'_>,
    k: usize,
    cache_dir: &Path,
) -> Result<(ArtifactRecord, Vec<DownloadFailure>), CrawlError> {
    if k < MIN_GROUND_TRUTH {
        return Err(CrawlError::Spec(format!("k must be at least {MIN_GROUND_TRUTH}")));
    }
    let titles: Vec<String> = record
        .ground_truth
        .iter()
        .filter(|r| !r.starts_with("http://") && !r.starts_with("https://"))
        .cloned()
        .collect();
    let resolved = if titles.is_empty() {
        BTreeMap::new()
    } else {
        client.image_urls(&titles)?
    };
    let dir = cache_dir.join(path_segment(&record.name));
    let mut paths = Vec::new();
    let mut failures = Vec::new();
    for src in &record.ground_truth {
        if paths.len() == k {
            break;
        }
        let url = if src.starts_with("http://") || src.starts_with("https://") {
            src.clone()
        } else if let Some(u) = resolved.get(src) {
            u.clone()
        } else {
            failures.push(DownloadFailure {
                source: src.clone(),
                reason: "no image url".into(),
            });
            continue;
        };
        let name = format!("{}_{}.{}", paths.len(), &sha256_hex(url.as_bytes())[..12], extension_of(&url));
        let path = dir.join(name);
        if !path.exists() {
            match client.media_url(&url) {
                Ok(bytes) => write_atomic(&path, &bytes).map_err(|source| CrawlError::Io {
                    path: path.clone(),
                    source,
                })?,
                Err(e) => {
                    failures.push(DownloadFailure {
                        source: src.clone(),
                        reason: e.to_string(),
                    });
                    continue;
                }
            }
        }
        paths.push(path.to_string_lossy().into_owned());
    }
    if paths.len() < MIN_GROUND_TRUTH {
        return Err(CrawlError::BelowThreshold {
            artifact: record.name.clone(),
            available: paths.len(),
            needed: MIN_GROUND_TRUTH,
            failures,
        });
    }
    let mut out = record.clone();
    out.ground_truth = paths;
    Ok((out, failures))
}

/// Builds fixture responses for a synthetic category tree. Used by tests and
/// by the CLI's offline demo fixtures.
pub mod fixtures {
    use serde_json::json;

    use super::*;

    /// `tree`: country subcategory title → (entity title → file titles).
    pub fn write_tree(
        dir: &Path,
        root: &str,
        tree: &BTreeMap<String, BTreeMap<String, Vec<String>>>,
    ) -> std::io::Result<()> {
        let fx = FixtureTransport::new(dir);
        let api = Url::parse(COMMONS_API).expect("valid API url");
        let url = |params: &[(&str, &str)]| {
            let mut u = api.clone();
            u.query_pairs_mut()
                .append_pair("format", "json")
                .append_pair("formatversion", "2")
                .extend_pairs(params.iter().copied());
            u.to_string()
        };
        let members = |title: &str, kind: &str, items: Vec<&String>| -> std::io::Result<()> {
            let body = json!({"query": {"categorymembers":
                items.iter().map(|t| json!({"title": t})).collect::<Vec<_>>()}});
            fx.record(
                &url(&[
                    ("action", "query"),
                    ("list", "categorymembers"),
                    ("cmtitle", title),
                    ("cmtype", kind),
                    ("cmlimit", "500"),
                ]),
                ResponseKind::Json,
                body.to_string().as_bytes(),
            )
        };
        fx.record(
            &url(&[("action", "query"), ("titles", root)]),
            ResponseKind::Json,
            json!({"query": {"pages": [{"title": root, "ns": 14}]}}).to_string().as_bytes(),
        )?;
        members(root, "subcat", tree.keys().collect())?;
        for (country, entities) in tree {
            members(country, "subcat", entities.keys().collect())?;
            for (entity, files) in entities {
                members(entity, "file", files.iter().collect())?;
                for chunk in files.chunks(50) {
                    let titles = chunk.join("|");
                    let pages: Vec<_> = chunk
                        .iter()
                        .map(|f| json!({"title": f, "imageinfo": [{"url": media_url(f)}]}))
                        .collect();
                    fx.record(
                        &url(&[
                            ("action", "query"),
                            ("prop", "imageinfo"),
                            ("iiprop", "url"),
                            ("titles", &titles),
                        ]),
                        ResponseKind::Json,
                        json!({"query": {"pages": pages}}).to_string().as_bytes(),
                    )?;
                }
            }
        }
        Ok(())
    }

    /// Synthetic upload URL of a file title.
    pub fn media_url(file: &str) -> String {
        format!(
            "https://upload.wikimedia.org/fixture/{}",
            strip_ns(file).replace(' ', "_")
        )
    }

    /// Records a media body for `file`.
    pub fn write_media(dir: &Path, file: &str, bytes: &[u8]) -> std::io::Result<()> {
        FixtureTransport::new(dir).record(&media_url(file), ResponseKind::Media, bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::{write_media, write_tree};
    use super::*;

    fn files(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("File:{prefix} {i}.jpg")).collect()
    }

    fn tree() -> BTreeMap<String, BTreeMap<String, Vec<String>>> {
        let mut t = BTreeMap::new();
        t.insert(
            "Category:Dumplings of Poland".to_string(),
            [("Category:Pierogi".to_string(), files("Pierogi", 5))].into(),
        );
        t.insert(
            "Category:Dumplings of Ghana".to_string(),
            [("Category:Banku".to_string(), files("Banku", 3))].into(),
        );
        t.insert(
            "Category:Dumplings of Atlantis".to_string(),
            [("Category:Myth".to_string(), files("Myth", 9))].into(),
        );
        t
    }

    fn spec() -> CrawlSpec {
        CrawlSpec {
            supercategory: "Food".into(),
            category: "Dumplings".into(),
            category_pattern: default_pattern(),
            min_images: 4,
            max_artifacts: None,
        }
    }

    #[test]
    fn country_parsing() {
        assert_eq!(country_from_title("Category:Dumplings of Poland").as_deref(), Some("Poland"));
        assert_eq!(
            country_from_title("Category:Bridges in the United States").as_deref(),
            Some("United States")
        );
        assert_eq!(country_from_title("Category:Hats from Peru").as_deref(), Some("Peru"));
        assert_eq!(country_from_title("Category:Dumplings"), None);
    }

    #[test]
    fn crawl_fixture_tree() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), "Category:Dumplings by country", &tree()).unwrap();
        let t = FixtureTransport::new(dir.path());
        let r = crawl_category(&spec(), &WikiClient::new(&t)).unwrap();
        assert_eq!(r.candidates.len(), 1);
        let c = &r.candidates[0];
        assert_eq!((c.name.as_str(), c.region.as_str(), c.continent.as_str()), ("Pierogi", "Poland", "Europe"));
        assert_eq!(c.ground_truth.len(), 5);
        assert_eq!(c.ambiguous, None);
        let reasons: BTreeMap<&str, &str> = r.skipped.iter().map(|s| (s.entry.as_str(), s.reason.as_str())).collect();
        assert_eq!(reasons["Category:Banku"], "insufficient-images");
        assert_eq!(reasons["Category:Dumplings of Atlantis"], "unknown-region");
        assert_eq!(r.review, vec!["Pierogi"]);
        // replay is deterministic
        assert_eq!(crawl_category(&spec(), &WikiClient::new(&t)).unwrap(), r);
    }

    #[test]
    fn empty_and_missing_categories() {
        let dir = tempfile::tempdir().unwrap();
        write_tree(dir.path(), "Category:Dumplings by country", &BTreeMap::new()).unwrap();
        let t = FixtureTransport::new(dir.path());
        let r = crawl_category(&spec(), &WikiClient::new(&t)).unwrap();
        assert!(r.candidates.is_empty() && r.skipped.is_empty());

        let fx = FixtureTransport::new(dir.path());
        let mut s = spec();
        s.category = "Hats".into();
        let url = format!(
            "{COMMONS_API}?format=json&formatversion=2&action=query&titles=Category%3AHats+by+country"
        );
        fx.record(&url, ResponseKind::Json, br#"{"query":{"pages":[{"title":"Category:Hats by country","missing":true}]}}"#)
            .unwrap();
        assert!(matches!(crawl_category(&s, &WikiClient::new(&t)), Err(CrawlError::CategoryNotFound(_))));
    }

    #[test]
    fn continuation_is_followed() {
        let dir = tempfile::tempdir().unwrap();
        let fx = FixtureTransport::new(dir.path());
        let base = format!("{COMMONS_API}?format=json&formatversion=2&action=query&list=categorymembers&cmtitle=Category%3AX&cmtype=file&cmlimit=500");
        fx.record(&base, ResponseKind::Json, br#"{"continue":{"cmcontinue":"page|2","continue":"-||"},"query":{"categorymembers":[{"title":"File:a"}]}}"#).unwrap();
        fx.record(&format!("{base}&cmcontinue=page%7C2"), ResponseKind::Json, br#"{"query":{"categorymembers":[{"title":"File:b"}]}}"#).unwrap();
        let m = WikiClient::new(&fx).category_members("Category:X", MemberType::File).unwrap();
        assert_eq!(m, vec!["File:a", "File:b"]);
    }

    fn gt_setup(n_files: usize, poisoned: Option<usize>) -> (tempfile::TempDir, ArtifactRecord) {
        let dir = tempfile::tempdir().unwrap();
        let fs = files("Pierogi", n_files);
        let mut t = tree();
        t.insert(
            "Category:Dumplings of Poland".into(),
            [("Category:Pierogi".to_string(), fs.clone())].into(),
        );
        write_tree(dir.path(), "Category:Dumplings by country", &t).unwrap();
        for (i, f) in fs.iter().enumerate() {
            if Some(i) != poisoned {
                write_media(dir.path(), f, format!("bytes {i}").as_bytes()).unwrap();
            }
        }
        let rec = ArtifactRecord {
            name: "Pierogi".into(),
            category: "Dumplings".into(),
            supercategory: "Food".into(),
            region: "Poland".into(),
            continent: "Europe".into(),
            global_bucket: crate::dataset::GlobalBucket::GN,
            ground_truth: fs,
            ambiguous: None,
        };
        (dir, rec)
    }

    #[test]
    fn ground_truth_truncates_to_k() {
        let (dir, rec) = gt_setup(6, None);
        let t = FixtureTransport::new(dir.path());
        let cache = dir.path().join("gt");
        let (out, failures) = fetch_ground_truth(&rec, &WikiClient::new(&t), 4, &cache).unwrap();
        assert_eq!(out.ground_truth.len(), 4);
        assert!(failures.is_empty());
        assert!(out.ground_truth.iter().all(|p| Path::new(p).exists()));
        assert_eq!(std::fs::read(&out.ground_truth[0]).unwrap(), b"bytes 0");
    }

    #[test]
    fn ground_truth_below_threshold() {
        let (dir, rec) = gt_setup(3, None);
        let t = FixtureTransport::new(dir.path());
        assert!(matches!(
            fetch_ground_truth(&rec, &WikiClient::new(&t), 4, &dir.path().join("gt")),
            Err(CrawlError::BelowThreshold { available: 3, .. })
        ));
        let (dir, rec) = gt_setup(4, Some(2));
        let t = FixtureTransport::new(dir.path());
        match fetch_ground_truth(&rec, &WikiClient::new(&t), 4, &dir.path().join("gt")) {
            Err(CrawlError::BelowThreshold { available, failures, .. }) => {
                assert_eq!(available, 3);
                assert_eq!(failures.len(), 1);
            }
            other => panic!("{other:?}"),
        }
    }
}
