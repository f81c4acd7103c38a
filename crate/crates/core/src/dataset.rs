//! The benchmark dataset: supercategory → category → artifact, each artifact
//! tied to one country and a set of ground-truth reference images.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::regions::{self, RegionTable};

/// Minimum number of ground-truth images an artifact needs to be admitted.
pub const MIN_GROUND_TRUTH: usize = 4;

const HIERARCHY_JSON: &str = include_str!("../resources/hierarchy.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GlobalBucket {
    GN,
    GS,
}

impl fmt::Display for GlobalBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GlobalBucket::GN => "GN",
            GlobalBucket::GS => "GS",
        })
    }
}

/// One cultural artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    pub name: String,
    pub category: String,
    pub supercategory: String,
    pub region: String,
    pub continent: String,
    pub global_bucket: GlobalBucket,
    pub ground_truth: Vec<String>,
    /// `None` means the record has not been reviewed for ambiguity yet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambiguous: Option<bool>,
}

/// Declared supercategory → categories structure.
pub type Hierarchy = BTreeMap<String, Vec<String>>;

/// The hierarchy table shipped with the crate.
pub fn builtin_hierarchy() -> &'static Hierarchy {
    static H: OnceLock<Hierarchy> = OnceLock::new();
    H.get_or_init(|| serde_json::from_str(HIERARCHY_JSON).expect("bundled hierarchy.json"))
}

/// Normalised label used for hierarchy matching: case-insensitive and
/// tolerant of a trailing plural "s" ("Celebrations" vs "Celebration").
pub fn label_key(s: &str) -> String {
    let lower = s.trim().to_lowercase();
    match lower.strip_suffix('s') {
        Some(stem) if !stem.is_empty() => stem.to_string(),
        _ => lower,
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed dataset file: {0}")]
    Parse(String),
    #[error("record {record}: {reason}")]
    Schema { record: String, reason: String },
}

impl DatasetError {
    fn schema(record: impl Into<String>, reason: impl Into<String>) -> Self {
        DatasetError::Schema {
            record: record.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile<T> {
    artifacts: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hierarchy: Option<Hierarchy>,
}

/// Loaded, validated and indexed dataset. Immutable after construction.
#[derive(Debug, Clone)]
pub struct Dataset {
    artifacts: Vec<ArtifactRecord>,
    custom_hierarchy: Option<Hierarchy>,
    by_name: HashMap<String, usize>,
    by_supercategory: BTreeMap<String, Vec<usize>>,
    by_category: BTreeMap<String, Vec<usize>>,
    by_region: BTreeMap<String, Vec<usize>>,
}

pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Dataset::from_json_str(&text)
}

impl Dataset {
    pub fn from_json_str(text: &str) -> Result<Dataset, DatasetError> {
        let file: DatasetFile<Value> =
            serde_json::from_str(text).map_err(|e| DatasetError::Parse(e.to_string()))?;
        let mut artifacts = Vec::with_capacity(file.artifacts.len());
        for (i, raw) in file.artifacts.into_iter().enumerate() {
            let label = raw
                .get("name")
                .and_then(Value::as_str)
                .map(|n| format!("#{i} ({n})"))
                .unwrap_or_else(|| format!("#{i}"));
            let rec: ArtifactRecord = serde_json::from_value(raw)
                .map_err(|e| DatasetError::schema(label.clone(), e.to_string()))?;
            artifacts.push(rec);
        }
        Dataset::new(artifacts, file.hierarchy)
    }

    /// Builds a dataset from records, enforcing every record and dataset
    /// invariant. `hierarchy` overrides the built-in supercategory table.
    pub fn new(
        artifacts: Vec<ArtifactRecord>,
        hierarchy: Option<Hierarchy>,
    ) -> Result<Dataset, DatasetError> {
        let regions = RegionTable::builtin();
        let declared = hierarchy.as_ref().unwrap_or_else(|| builtin_hierarchy());
        let allowed: HashMap<String, BTreeSet<String>> = declared
            .iter()
            .map(|(s, cs)| (label_key(s), cs.iter().map(|c| label_key(c)).collect()))
            .collect();

        let mut by_name = HashMap::new();
        let mut region_bucket: HashMap<String, GlobalBucket> = HashMap::new();
        for (i, a) in artifacts.iter().enumerate() {
            check_record(a, regions, &allowed)?;
            if by_name.insert(a.name.clone(), i).is_some() {
                return Err(DatasetError::schema(&a.name, "duplicate artifact name"));
            }
            match region_bucket.get(&a.region) {
                Some(b) if *b != a.global_bucket => {
                    return Err(DatasetError::schema(
                        &a.name,
                        format!("region {} assigned to both {} and {}", a.region, b, a.global_bucket),
                    ))
                }
                _ => {
                    region_bucket.insert(a.region.clone(), a.global_bucket);
                }
            }
        }

        let mut by_supercategory: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_category: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        let mut by_region: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, a) in artifacts.iter().enumerate() {
            by_supercategory.entry(a.supercategory.clone()).or_default().push(i);
            by_category.entry(a.category.clone()).or_default().push(i);
            by_region.entry(a.region.clone()).or_default().push(i);
        }
        Ok(Dataset {
            artifacts,
            custom_hierarchy: hierarchy,
            by_name,
            by_supercategory,
            by_category,
            by_region,
        })
    }

    pub fn artifacts(&self) -> &[ArtifactRecord] {
        &self.artifacts
    }

    pub fn len(&self) -> usize {
        self.artifacts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.artifacts.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ArtifactRecord> {
        self.by_name.get(name).map(|&i| &self.artifacts[i])
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        self.custom_hierarchy
            .as_ref()
            .unwrap_or_else(|| builtin_hierarchy())
    }

    fn collect<'a>(&'a self, idx: Option<&'a Vec<usize>>) -> Vec<&'a ArtifactRecord> {
        idx.map(|v| v.iter().map(|&i| &self.artifacts[i]).collect())
            .unwrap_or_default()
    }

    pub fn in_supercategory(&self, s: &str) -> Vec<&ArtifactRecord> {
        self.collect(self.by_supercategory.get(s))
    }

    pub fn in_category(&self, c: &str) -> Vec<&ArtifactRecord> {
        self.collect(self.by_category.get(c))
    }

    /// The per-region artifact subset.
    pub fn in_region(&self, r: &str) -> Vec<&ArtifactRecord> {
        self.collect(self.by_region.get(r))
    }

    pub fn supercategories(&self) -> impl Iterator<Item = &str> {
        self.by_supercategory.keys().map(String::as_str)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.by_category.keys().map(String::as_str)
    }

    pub fn regions(&self) -> impl Iterator<Item = &str> {
        self.by_region.keys().map(String::as_str)
    }

    /// Records that may enter scoring (explicitly flagged ambiguous records
    /// are rejected at load, so this is every record).
    pub fn scoring_artifacts(&self) -> impl Iterator<Item = &ArtifactRecord> {
        self.artifacts.iter().filter(|a| a.ambiguous != Some(true))
    }

    pub fn to_json_string(&self) -> String {
        let file = DatasetFile {
            artifacts: self.artifacts.clone(),
            hierarchy: self.custom_hierarchy.clone(),
        };
        serde_json::to_string_pretty(&file).expect("dataset serializes")
    }
}

fn check_record(
    a: &ArtifactRecord,
    regions: &RegionTable,
    allowed: &HashMap<String, BTreeSet<String>>,
) -> Result<(), DatasetError> {
    for (field, value) in [
        ("name", &a.name),
        ("category", &a.category),
        ("supercategory", &a.supercategory),
        ("region", &a.region),
        ("continent", &a.continent),
    ] {
        if value.trim().is_empty() {
            return Err(DatasetError::schema(&a.name, format!("empty field `{field}`")));
        }
    }
    if a.ground_truth.len() < MIN_GROUND_TRUTH {
        return Err(DatasetError::schema(
            &a.name,
            format!(
                "{} ground-truth images, at least {MIN_GROUND_TRUTH} required",
                a.ground_truth.len()
            ),
        ));
    }
    if a.ambiguous == Some(true) {
        return Err(DatasetError::schema(&a.name, "flagged ambiguous"));
    }
    if regions.lookup(&a.region).is_none() {
        return Err(DatasetError::schema(&a.name, format!("unknown region `{}`", a.region)));
    }
    if !regions::is_known_continent(&a.continent) {
        return Err(DatasetError::schema(
            &a.name,
            format!("unknown continent `{}`", a.continent),
        ));
    }
    match allowed.get(&label_key(&a.supercategory)) {
        None => Err(DatasetError::schema(
            &a.name,
            format!("supercategory `{}` not in hierarchy", a.supercategory),
        )),
        Some(cats) if !cats.contains(&label_key(&a.category)) => Err(DatasetError::schema(
            &a.name,
            format!(
                "category `{}` not declared under `{}`",
                a.category, a.supercategory
            ),
        )),
        Some(_) => Ok(()),
    }
}

/// Statistics a dataset is expected to match.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpectedStats {
    pub artifacts: usize,
    pub supercategories: usize,
    pub categories: usize,
    pub regions: usize,
    pub per_supercategory: usize,
    pub global_north: usize,
    pub global_south: usize,
}

impl ExpectedStats {
    /// Published statistics of the released benchmark dataset.
    pub fn released() -> Self {
        ExpectedStats {
            artifacts: 300,
            supercategories: 6,
            categories: 32,
            regions: 64,
            per_supercategory: 50,
            global_north: 123,
            global_south: 177,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub expected: usize,
    pub actual: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub artifacts: usize,
    pub supercategories: usize,
    pub categories: usize,
    pub regions: usize,
    pub per_supercategory: BTreeMap<String, usize>,
    pub global_north: usize,
    pub global_south: usize,
    /// Records whose continent or bucket disagrees with the shipped region table.
    pub region_table_mismatches: Vec<String>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

pub fn validate_dataset(d: &Dataset, expected: Option<&ExpectedStats>) -> ValidationReport {
    let per_supercategory: BTreeMap<String, usize> = d
        .by_supercategory
        .iter()
        .map(|(k, v)| (k.clone(), v.len()))
        .collect();
    let gn = d
        .artifacts
        .iter()
        .filter(|a| a.global_bucket == GlobalBucket::GN)
        .count();
    let gs = d.len() - gn;

    let table = RegionTable::builtin();
    let mut mismatches = Vec::new();
    for a in &d.artifacts {
        if let Some(info) = table.lookup(&a.region) {
            if info.bucket != a.global_bucket {
                mismatches.push(format!(
                    "{}: region {} is {} in the region table, record says {}",
                    a.name, a.region, info.bucket, a.global_bucket
                ));
            }
            if !info.continent.eq_ignore_ascii_case(&a.continent) {
                mismatches.push(format!(
                    "{}: region {} is in {} in the region table, record says {}",
                    a.name, a.region, info.continent, a.continent
                ));
            }
        }
    }

    let mut checks = Vec::new();
    if let Some(e) = expected {
        let mut push = |name: &str, expected: usize, actual: usize| {
            checks.push(Check {
                name: name.to_string(),
                expected,
                actual,
                pass: expected == actual,
            })
        };
        push("artifacts", e.artifacts, d.len());
        push("supercategories", e.supercategories, d.by_supercategory.len());
        push("categories", e.categories, d.by_category.len());
        push("regions", e.regions, d.by_region.len());
        push("global_north", e.global_north, gn);
        push("global_south", e.global_south, gs);
        for (s, n) in &per_supercategory {
            push(&format!("supercategory:{s}"), e.per_supercategory, *n);
        }
    }
    let passed = !d.is_empty() && checks.iter().all(|c| c.pass);
    ValidationReport {
        artifacts: d.len(),
        supercategories: d.by_supercategory.len(),
        categories: d.by_category.len(),
        regions: d.by_region.len(),
        per_supercategory,
        global_north: gn,
        global_south: gs,
        region_table_mismatches: mismatches,
        checks,
        passed,
    }
}
