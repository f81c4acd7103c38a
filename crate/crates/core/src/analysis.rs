//! Rank correlation against gold judgments, grouped aggregates, benchmark
//! tables and caption-corpus concept frequencies.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::dataset::Dataset;
use crate::gold::{mean_std, GoldAggregate, GoldQuestion, GoldRecord};
use crate::scorers::context::ids;
use crate::scorers::ScoreRecord;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no artifacts shared between scores and gold")]
    EmptyIntersection,
    #[error("artifact `{0}` not in dataset")]
    UnknownArtifact(String),
    #[error("unknown group `{0}`")]
    UnknownGroup(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{0}")]
    Corpus(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UndefinedReason {
    /// One side has zero variance.
    Constant,
    /// Fewer than two complete pairs.
    TooFewPairs,
}

/// A correlation that may be undefined. Never NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "lowercase")]
pub enum Rho {
    Defined(f64),
    Undefined(UndefinedReason),
}

impl Rho {
    pub fn value(&self) -> Option<f64> {
        match self {
            Rho::Defined(v) => Some(*v),
            Rho::Undefined(_) => None,
        }
    }

    fn cell(&self) -> String {
        match self {
            Rho::Defined(v) => format!("{v:.2}"),
            Rho::Undefined(_) => "n/a".into(),
        }
    }
}

/// Fractional (average) ranks, 1-based.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Rho {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Rho::Undefined(UndefinedReason::Constant);
    }
    Rho::Defined((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho with average ranks for ties. Pairs with a NaN on either
/// side are dropped first.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<Rho, AnalysisError> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = xs
        .iter()
        .zip(ys)
        .filter(|(a, b)| !a.is_nan() && !b.is_nan())
        .map(|(a, b)| (*a, *b))
        .unzip();
    if x.len() < 2 {
        return Ok(Rho::Undefined(UndefinedReason::TooFewPairs));
    }
    Ok(pearson(&average_ranks(&x), &average_ranks(&y)))
}

/// Replaces category-level records (artifact = `category:<c>`) with one copy
/// per member artifact of the category.
pub fn broadcast_category_scores(scores: &[ScoreRecord], dataset: &Dataset) -> Vec<ScoreRecord> {
    let mut out = Vec::with_capacity(scores.len());
    for r in scores {
        match r.artifact.strip_prefix("category:") {
            Some(c) => {
                for a in dataset.in_category(c) {
                    out.push(ScoreRecord {
                        artifact: a.name.clone(),
                        ..r.clone()
                    });
                }
            }
            None => out.push(r.clone()),
        }
    }
    out
}

/// Row label of a score in correlation and benchmark tables.
pub fn row_label(r: &ScoreRecord) -> String {
    let scorer = if r.style.is_empty() {
        r.scorer_id.clone()
    } else {
        format!("{}({})", r.scorer_id, r.style)
    };
    if r.encoder_or_vlm.is_empty() {
        scorer
    } else {
        format!("{scorer}@{}", r.encoder_or_vlm)
    }
}

/// Which scorers form the rows of each table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub scorers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableLayout {
    pub tables: Vec<TableSpec>,
    pub questions: Vec<GoldQuestion>,
}

impl TableLayout {
    /// Perceptual similarity, image-text alignment and diversity tables with
    /// the CURE / GT / PS gold columns.
    pub fn standard() -> Self {
        let t = |name: &str, s: &[&str]| TableSpec {
            name: name.into(),
            scorers: s.iter().map(|x| x.to_string()).collect(),
        };
        TableLayout {
            tables: vec![
                t("perceptual-similarity", &[ids::PHI_GT, ids::PHI_PS, ids::DPHI_PS]),
                t("image-text-alignment", &[ids::ITA, ids::PHI_ITA]),
                t(
                    "diversity",
                    &[ids::LPIPS_N, ids::LPIPS_C, ids::PHI_DIV, ids::DPHI_DIV, ids::VS, ids::VS_NORM, ids::QVS],
                ),
            ],
            questions: vec![GoldQuestion::Cure, GoldQuestion::Gt, GoldQuestion::Ps],
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "standard" => Some(Self::standard()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub table: String,
    pub scorer_id: String,
    pub gold_question: GoldQuestion,
    pub system_id: String,
    pub rho: Rho,
    pub n: usize,
    /// Largest |rho| in its (table, question, system) column.
    pub bold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub cells: Vec<CorrelationCell>,
}

/// Mean value per (row label, system, artifact); duplicate records average.
fn score_index(scores: &[ScoreRecord]) -> BTreeMap<(String, String), BTreeMap<String, f64>> {
    let mut acc: BTreeMap<(String, String), BTreeMap<String, (f64, usize)>> = BTreeMap::new();
    for r in scores {
        let e = acc
            .entry((row_label(r), r.system_id.clone()))
            .or_default()
            .entry(r.artifact.clone())
            .or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, m)| (k, m.into_iter().map(|(a, (s, n))| (a, s / n as f64)).collect()))
        .collect()
}

/// One cell per (row, gold question, system), pairing per-artifact scores
/// with per-artifact mean Likert. Missing artifacts are dropped per cell.
pub fn correlation_table(
    scores: &[ScoreRecord],
    gold: &[GoldAggregate],
    layout: &TableLayout,
) -> Result<CorrelationTable, AnalysisError> {
    let index = score_index(scores);
    let scorer_of: BTreeMap<String, String> = scores
        .iter()
        .map(|r| (row_label(r), r.scorer_id.clone()))
        .collect();
    let mut gold_index: BTreeMap<(GoldQuestion, &str), BTreeMap<&str, f64>> = BTreeMap::new();
    for g in gold {
        gold_index
            .entry((g.question, &g.system_id))
            .or_default()
            .insert(&g.artifact, g.mean);
    }
    let systems: BTreeSet<&str> = gold.iter().map(|g| g.system_id.as_str()).collect();

    let mut cells = Vec::new();
    let mut any_pairs = false;
    for table in &layout.tables {
        let rows: Vec<&String> = scorer_of
            .iter()
            .filter(|(_, s)| table.scorers.contains(s))
            .map(|(label, _)| label)
            .collect();
        for &q in &layout.questions {
            for &sys in &systems {
                let first = cells.len();
                let Some(gmap) = gold_index.get(&(q, sys)) else { continue };
                for label in &rows {
                    let Some(smap) = index.get(&((*label).clone(), sys.to_string())) else { continue };
                    let (xs, ys): (Vec<f64>, Vec<f64>) = smap
                        .iter()
                        .filter_map(|(a, v)| gmap.get(a.as_str()).map(|g| (*v, *g)))
                        .unzip();
                    any_pairs |= !xs.is_empty();
                    let rho = spearman_rho(&xs, &ys)?;
                    cells.push(CorrelationCell {
                        table: table.name.clone(),
                        scorer_id: (*label).clone(),
                        gold_question: q,
                        system_id: sys.to_string(),
                        rho,
                        n: xs.len(),
                        bold: false,
                    });
                }
                let best = cells[first..]
                    .iter()
                    .filter_map(|c| c.rho.value())
                    .map(f64::abs)
                    .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
                if let Some(best) = best {
                    for c in &mut cells[first..] {
                        c.bold = c.rho.value().is_some_and(|v| v.abs() == best);
                    }
                }
            }
        }
    }
    if !any_pairs {
        return Err(AnalysisError::EmptyIntersection);
    }
    Ok(CorrelationTable { cells })
}

impl CorrelationTable {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["table", "scorer", "question", "system", "rho", "n", "bold"])
            .expect("in-memory csv");
        for c in &self.cells {
            let rho = c.rho.value().map(|v| format!("{v}")).unwrap_or_default();
            w.write_record([
                c.table.as_str(),
                &c.scorer_id,
                c.gold_question.as_str(),
                &c.system_id,
                &rho,
                &c.n.to_string(),
                if c.bold { "1" } else { "0" },
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    /// One markdown table per layout table: rows are scorers, columns are
    /// question × system. Bold cells are wrapped in `**`.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let tables: Vec<&str> = {
            let mut seen = Vec::new();
            for c in &self.cells {
                if !seen.contains(&c.table.as_str()) {
                    seen.push(c.table.as_str());
                }
            }
            seen
        };
        for t in tables {
            let cells: Vec<&CorrelationCell> = self.cells.iter().filter(|c| c.table == t).collect();
            let mut cols: Vec<(GoldQuestion, &str)> = Vec::new();
            let mut rows: Vec<&str> = Vec::new();
            for c in &cells {
                if !cols.contains(&(c.gold_question, c.system_id.as_str())) {
                    cols.push((c.gold_question, &c.system_id));
                }
                if !rows.contains(&c.scorer_id.as_str()) {
                    rows.push(&c.scorer_id);
                }
            }
            rows.sort_unstable();
            let _ = writeln!(out, "### {t}\n");
            let header: Vec<String> = cols.iter().map(|(q, s)| format!("{q} {s}")).collect();
            let _ = writeln!(out, "| scorer | {} |", header.join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(cols.len()));
            for r in rows {
                let vals: Vec<String> = cols
                    .iter()
                    .map(|(q, s)| {
                        cells
                            .iter()
                            .find(|c| c.scorer_id == r && c.gold_question == *q && c.system_id == *s)
                            .map(|c| {
                                if c.bold {
                                    format!("**{}**", c.rho.cell())
                                } else {
                                    c.rho.cell()
                                }
                            })
                            .unwrap_or_default()
                    })
                    .collect();
                let _ = writeln!(out, "| {r} | {} |", vals.join(" | "));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GroupBy {
    Region,
    Supercategory,
    Continent,
    GlobalBucket,
}

impl std::str::FromStr for GroupBy {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "region" => Ok(GroupBy::Region),
            "supercategory" => Ok(GroupBy::Supercategory),
            "continent" => Ok(GroupBy::Continent),
            "globalbucket" | "bucket" => Ok(GroupBy::GlobalBucket),
            _ => Err(AnalysisError::UnknownGroup(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub group: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean ± population std of per-artifact values per group, in group order.
pub fn aggregate_scores<'a>(
    values: impl IntoIterator<Item = (&'a str, f64)>,
    dataset: &Dataset,
    group_by: GroupBy,
) -> Result<Vec<GroupStat>, AnalysisError> {
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (artifact, v) in values {
        let a = dataset
            .get(artifact)
            .ok_or_else(|| AnalysisError::UnknownArtifact(artifact.to_string()))?;
        let key = match group_by {
            GroupBy::Region => a.region.clone(),
            GroupBy::Supercategory => a.supercategory.clone(),
            GroupBy::Continent => a.continent.clone(),
            GroupBy::GlobalBucket => a.global_bucket.to_string(),
        };
        groups.entry(key).or_default().push(v);
    }
    Ok(groups
        .into_iter()
        .map(|(group, v)| {
            let (mean, std) = mean_std(&v).expect("non-empty group");
            GroupStat { group, mean, std, n: v.len() }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub system_id: String,
    pub cells: Vec<Option<ReportCell>>,
    pub elo: Option<f64>,
    pub refusal_rate: Option<f64>,
    /// Refusal rate above the report threshold.
    pub refusal_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Score row labels followed by `gold:<QUESTION>` columns.
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
    /// Spearman rho between each column's system means and ELO.
    pub elo_rho: Vec<Rho>,
}

#[derive(Debug, Clone)]
pub struct ReportInputs<'a> {
    pub systems: &'a [String],
    pub scores: &'a [ScoreRecord],
    pub gold: &'a [GoldRecord],
    pub elo: &'a BTreeMap<String, f64>,
    /// Percentage of refused seeds per system.
    pub refusal_rates: &'a BTreeMap<String, f64>,
    pub refusal_threshold: f64,
}

/// Per-system mean ± std of every scorer variant over artifacts, and of
/// every gold question over individual ratings, plus a final row of rank
/// correlations with ELO.
pub fn benchmark_report(inp: &ReportInputs<'_>) -> Result<BenchmarkReport, AnalysisError> {
    let index = score_index(inp.scores);
    let variants: BTreeSet<&str> = index.keys().map(|(v, _)| v.as_str()).collect();
    let questions: BTreeSet<GoldQuestion> = inp.gold.iter().map(|g| g.question).collect();
    let mut columns: Vec<String> = variants.iter().map(|v| v.to_string()).collect();
    columns.extend(questions.iter().map(|q| format!("gold:{q}")));

    let mut rows = Vec::new();
    for sys in inp.systems {
        let mut cells = Vec::with_capacity(columns.len());
        for v in &variants {
            let vals: Vec<f64> = index
                .get(&(v.to_string(), sys.clone()))
                .map(|m| m.values().copied().collect())
                .unwrap_or_default();
            cells.push(mean_std(&vals).map(|(mean, std)| ReportCell { mean, std, n: vals.len() }));
        }
        for q in &questions {
            let vals: Vec<f64> = inp
                .gold
                .iter()
                .filter(|g| &g.system_id == sys && g.question == *q)
                .map(|g| f64::from(g.likert))
                .collect();
            cells.push(mean_std(&vals).map(|(mean, std)| ReportCell { mean, std, n: vals.len() }));
        }
        let elo = inp.elo.get(sys).copied();
        if elo.is_none() {
            warn!(system = %sys, "no ELO rating, system left out of the ELO correlation");
        }
        let refusal_rate = inp.refusal_rates.get(sys).copied();
        rows.push(ReportRow {
            system_id: sys.clone(),
            cells,
            elo,
            refusal_rate,
            refusal_flag: refusal_rate.is_some_and(|r| r > inp.refusal_threshold),
        });
    }

    let mut elo_rho = Vec::with_capacity(columns.len());
    for c in 0..columns.len() {
        let (xs, ys): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .filter_map(|r| Some((r.cells[c].as_ref()?.mean, r.elo?)))
            .unzip();
        elo_rho.push(spearman_rho(&xs, &ys)?);
    }
    Ok(BenchmarkReport { columns, rows, elo_rho })
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["system".to_string()];
        header.extend(self.columns.iter().cloned());
        header.extend(["elo".to_string(), "refusal_rate".to_string(), "refusal_flag".to_string()]);
        w.write_record(&header).expect("in-memory csv");
        for r in &self.rows {
            let mut rec = vec![r.system_id.clone()];
            rec.extend(r.cells.iter().map(|c| c.as_ref().map(|c| format!("{}±{}", c.mean, c.std)).unwrap_or_default()));
            rec.push(r.elo.map(|e| e.to_string()).unwrap_or_default());
            rec.push(r.refusal_rate.map(|e| e.to_string()).unwrap_or_default());
            rec.push(if r.refusal_flag { "1".into() } else { "0".into() });
            w.write_record(&rec).expect("in-memory csv");
        }
        let mut rec = vec!["rho_elo".to_string()];
        rec.extend(self.elo_rho.iter().map(|r| r.value().map(|v| v.to_string()).unwrap_or_default()));
        rec.extend([String::new(), String::new(), String::new()]);
        w.write_record(&rec).expect("in-memory csv");
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8 csv")
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "| system | {} | ELO |", self.columns.join(" | "));
        let _ = writeln!(out, "|---|{}---|", "---|".repeat(self.columns.len()));
        for r in &self.rows {
            let cells: Vec<String> = r
                .cells
                .iter()
                .map(|c| c.as_ref().map(|c| format!("{:.3} ± {:.3}", c.mean, c.std)).unwrap_or_default())
                .collect();
            let name = if r.refusal_flag {
                format!("{}*", r.system_id)
            } else {
                r.system_id.clone()
            };
            let elo = r.elo.map(|e| format!("{e}")).unwrap_or_default();
            let _ = writeln!(out, "| {name} | {} | {elo} |", cells.join(" | "));
        }
        let rho: Vec<String> = self
            .elo_rho
            .iter()
            .map(|r| r.value().map(|v| format!("{v:.3}")).unwrap_or_else(|| "n/a".into()))
            .collect();
        let _ = writeln!(out, "| rho with ELO | {} | |", rho.join(" | "));
        if self.rows.iter().any(|r| r.refusal_flag) {
            out.push_str("\n\\* refusal rate above threshold; means cover generated images only.\n");
        }
        out
    }
}

/// How captions are laid out in corpus files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    /// One caption per line.
    Lines,
    /// Tab-separated with a header row; captions in the named column.
    Tsv { column: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyOptions {
    /// Require the name to be bounded by non-alphanumeric characters.
    pub word_boundary: bool,
    pub format: CorpusFormat,
}

impl Default for FrequencyOptions {
    fn default() -> Self {
        FrequencyOptions {
            word_boundary: false,
            format: CorpusFormat::Lines,
        }
    }
}

/// Case-insensitive caption matcher for a list of concept names.
pub struct ConceptCounter {
    names: Vec<String>,
    needles: Vec<String>,
    opts: FrequencyOptions,
}

fn contains_bounded(hay: &str, needle: &str) -> bool {
    let mut start = 0;
    while let Some(pos) = hay[start..].find(needle) {
        let b = start + pos;
        let e = b + needle.len();
        let before = hay[..b].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after = hay[e..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before && after {
            return true;
        }
        start = b + hay[b..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

impl ConceptCounter {
    pub fn new(names: &[String], opts: FrequencyOptions) -> Self {
        ConceptCounter {
            names: names.to_vec(),
            needles: names.iter().map(|n| n.trim().to_lowercase()).collect(),
            opts,
        }
    }

    /// Per-name counts of captions that mention the name.
    pub fn count_captions<I, S>(&self, captions: I) -> Vec<u64>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts = vec![0u64; self.needles.len()];
        for cap in captions {
            let hay = cap.as_ref().to_lowercase();
            for (i, n) in self.needles.iter().enumerate() {
                if n.is_empty() {
                    continue;
                }
                let hit = if self.opts.word_boundary {
                    contains_bounded(&hay, n)
                } else {
                    hay.contains(n.as_str())
                };
                if hit {
                    counts[i] += 1;
                }
            }
        }
        counts
    }

    /// Streams one shard file.
    pub fn count_file(&self, path: &Path) -> Result<Vec<u64>, AnalysisError> {
        let io = |source| AnalysisError::Io {
            path: path.to_path_buf(),
            source,
        };
        let reader = BufReader::new(File::open(path).map_err(io)?);
        let mut lines = reader.lines();
        let column = match &self.opts.format {
            CorpusFormat::Lines => None,
            CorpusFormat::Tsv { column } => {
                let header = match lines.next() {
                    Some(h) => h.map_err(io)?,
                    None => return Ok(vec![0; self.needles.len()]),
                };
                let idx = header.split('\t').position(|h| h.trim() == column).ok_or_else(|| {
                    AnalysisError::Corpus(format!("{}: no column `{column}`", path.display()))
                })?;
                Some(idx)
            }
        };
        let mut err = None;
        let captions = lines.map_while(|l| match l {
            Ok(l) => Some(l),
            Err(e) => {
                err = Some(e);
                None
            }
        });
        let counts = match column {
            None => self.count_captions(captions),
            Some(c) => self.count_captions(captions.map(|l| l.split('\t').nth(c).unwrap_or("").to_string())),
        };
        match err {
            Some(e) => Err(io(e)),
            None => Ok(counts),
        }
    }

    /// Counts over shard files in parallel and merges the per-shard counts.
    pub fn count_files(&self, paths: &[PathBuf]) -> Result<BTreeMap<String, u64>, AnalysisError> {
        let per_shard = paths
            .par_iter()
            .map(|p| self.count_file(p))
            .collect::<Result<Vec<_>, _>>()?;
        let mut total = vec![0u64; self.needles.len()];
        for s in per_shard {
            for (t, c) in total.iter_mut().zip(s) {
                *t += c;
            }
        }
        Ok(self.to_map(&total))
    }

    pub fn to_map(&self, counts: &[u64]) -> BTreeMap<String, u64> {
        self.names.iter().cloned().zip(counts.iter().copied()).collect()
    }
}

/// Counts captions mentioning each name (case-insensitive substring match).
pub fn concept_frequency<I, S>(captions: I, names: &[String]) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let c = ConceptCounter::new(names, FrequencyOptions::default());
    c.to_map(&c.count_captions(captions))
}

/// Expands a glob into a sorted list of files.
pub fn corpus_files(pattern: &str) -> Result<Vec<PathBuf>, AnalysisError> {
    let mut out: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| AnalysisError::Corpus(e.to_string()))?
        .filter_map(Result::ok)
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    /// Inclusive lower bound.
    pub low: u64,
    /// Exclusive upper bound.
    pub high: u64,
    pub artifacts: usize,
}

/// Decade bins: `[0,1)`, `[1,10)`, `[10,100)`, ...
pub fn log_histogram(counts: &BTreeMap<String, u64>) -> Vec<HistogramBin> {
    let max = counts.values().copied().max().unwrap_or(0);
    let mut bins = vec![HistogramBin { low: 0, high: 1, artifacts: 0 }];
    let mut low = 1u64;
    while low <= max {
        let high = low.saturating_mul(10);
        bins.push(HistogramBin { low, high, artifacts: 0 });
        if high == u64::MAX {
            break;
        }
        low = high;
    }
    for &c in counts.values() {
        if let Some(b) = bins.iter_mut().find(|b| c >= b.low && c < b.high) {
            b.artifacts += 1;
        }
    }
    bins
}

pub fn histogram_csv(bins: &[HistogramBin]) -> String {
    let mut out = String::from("low,high,artifacts\n");
    for b in bins {
        let _ = writeln!(out, "{},{},{}", b.low, b.high, b.artifacts);
    }
    out
}

/// Minimal bar chart of a decade histogram.
pub fn histogram_svg(bins: &[HistogramBin]) -> String {
    let (w, h, pad) = (60usize, 200usize, 30usize);
    let max = bins.iter().map(|b| b.artifacts).max().unwrap_or(0).max(1);
    let width = pad * 2 + w * bins.len();
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"10\">\n",
        h + pad * 2
    );
    for (i, b) in bins.iter().enumerate() {
        let bh = b.artifacts * h / max;
        let x = pad + i * w;
        let y = pad + h - bh;
        let _ = writeln!(
            out,
            "  <rect x=\"{}\" y=\"{y}\" width=\"{}\" height=\"{bh}\" fill=\"#4878a8\"/>",
            x + 4,
            w - 8
        );
        let _ = writeln!(out, "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>", x + w / 2, y.saturating_sub(3).max(10), b.artifacts);
        let _ = writeln!(
            out,
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">&lt;{}</text>",
            x + w / 2,
            pad + h + 14,
            b.high
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Rank correlation between concept frequency and a per-artifact gold mean,
/// per supercategory.
pub fn frequency_correlation(
    counts: &BTreeMap<String, u64>,
    gold: &[GoldAggregate],
    dataset: &Dataset,
    system_id: &str,
    question: GoldQuestion,
) -> Result<BTreeMap<String, (Rho, usize)>, AnalysisError> {
    let mut per: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for g in gold.iter().filter(|g| g.system_id == system_id && g.question == question) {
        let (Some(a), Some(&c)) = (dataset.get(&g.artifact), counts.get(&g.artifact)) else {
            continue;
        };
        let e = per.entry(a.supercategory.clone()).or_default();
        e.0.push(c as f64);
        e.1.push(g.mean);
    }
    per.into_iter()
        .map(|(s, (x, y))| Ok((s, (spearman_rho(&x, &y)?, x.len()))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::record;
    use proptest::prelude::*;

    fn rec(scorer: &str, sys: &str, artifact: &str, v: f64) -> ScoreRecord {
        ScoreRecord {
            scorer_id: scorer.into(),
            system_id: sys.into(),
            artifact: artifact.into(),
            style: "N".into(),
            encoder_or_vlm: "enc".into(),
            value: v,
            seeds_used: 4,
            adapter_version: String::new(),
        }
    }

    fn agg(sys: &str, artifact: &str, q: GoldQuestion, mean: f64) -> GoldAggregate {
        GoldAggregate {
            system_id: sys.into(),
            artifact: artifact.into(),
            question: q,
            mean,
            std: 0.0,
            n_workers: 3,
        }
    }

    #[test]
    fn spearman_basics() {
        let xs = [0.3, 1.0, -2.0, 5.5, 4.0];
        assert_eq!(spearman_rho(&xs, &xs).unwrap(), Rho::Defined(1.0));
        let neg: Vec<f64> = xs.iter().map(|x| -x * 3.0).collect();
        assert_eq!(spearman_rho(&xs, &neg).unwrap(), Rho::Defined(-1.0));
        assert_eq!(
            spearman_rho(&xs, &[2.0; 5]).unwrap(),
            Rho::Undefined(UndefinedReason::Constant)
        );
        assert_eq!(
            spearman_rho(&[1.0, f64::NAN, 2.0], &[1.0, 2.0, f64::NAN]).unwrap(),
            Rho::Undefined(UndefinedReason::TooFewPairs)
        );
        assert!(spearman_rho(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn table_monotone_and_anti_monotone() {
        let golds: Vec<f64> = vec![1.0, 2.5, 3.0, 4.2, 5.0];
        let mut scores = Vec::new();
        let mut gold = Vec::new();
        for (i, g) in golds.iter().enumerate() {
            let a = format!("a{i}");
            scores.push(rec(ids::PHI_GT, "s", &a, g.powi(3)));
            scores.push(rec(ids::DPHI_PS, "s", &a, -g));
            for q in [GoldQuestion::Cure, GoldQuestion::Gt, GoldQuestion::Ps] {
                gold.push(agg("s", &a, q, *g));
            }
        }
        let t = correlation_table(&scores, &gold, &TableLayout::standard()).unwrap();
        assert_eq!(t.cells.len(), 6);
        for c in &t.cells {
            let expected = if c.scorer_id.starts_with(ids::PHI_GT) { 1.0 } else { -1.0 };
            assert_eq!(c.rho, Rho::Defined(expected));
            assert_eq!(c.n, 5);
            assert!(c.bold);
        }
        assert!(t.to_markdown().contains("**1.00**"));
        assert!(t.to_csv().lines().count() == 7);
    }

    #[test]
    fn table_without_shared_artifacts_is_an_error() {
        let scores = vec![rec(ids::PHI_GT, "s", "x", 1.0)];
        let gold = vec![agg("s", "y", GoldQuestion::Ps, 2.0)];
        assert!(matches!(
            correlation_table(&scores, &gold, &TableLayout::standard()),
            Err(AnalysisError::EmptyIntersection)
        ));
    }

    fn dataset() -> Dataset {
        Dataset::new(
            vec![
                record("jiaozi", "Dumpling", "Food", "China"),
                record("baozi", "Dumpling", "Food", "China"),
                record("pierogi", "Dumpling", "Food", "Poland"),
                record("kolach", "Flatbread", "Food", "Poland"),
            ],
            None,
        )
        .unwrap()
    }

    #[test]
    fn grouping() {
        let d = dataset();
        let vals = [("jiaozi", 0.4), ("baozi", 0.6), ("pierogi", 0.9)];
        let g = aggregate_scores(vals, &d, GroupBy::Region).unwrap();
        assert_eq!(g[0].group, "China");
        assert!((g[0].mean - 0.5).abs() < 1e-12);
        assert_eq!(g[0].n, 2);
        let b = aggregate_scores(vals, &d, GroupBy::GlobalBucket).unwrap();
        assert_eq!(b.iter().map(|s| s.group.as_str()).collect::<Vec<_>>(), vec!["GN", "GS"]);
        assert!(aggregate_scores([("nope", 1.0)], &d, GroupBy::Region).is_err());
        assert!("planet".parse::<GroupBy>().is_err());
    }

    #[test]
    fn category_scores_broadcast_to_members() {
        let d = dataset();
        let mut r = rec(ids::VS, "s", "category:Dumpling", 2.0);
        r.style = "C".into();
        let out = broadcast_category_scores(&[r], &d);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|x| x.value == 2.0));
    }

    #[test]
    fn report_with_identical_systems_has_undefined_elo_rho() {
        let systems = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let mut scores = Vec::new();
        for s in &systems {
            scores.push(rec(ids::PHI_DIV, s, "x", 0.5));
            scores.push(rec(ids::PHI_DIV, s, "y", 0.7));
        }
        let elo: BTreeMap<String, f64> = [("a".into(), 1000.0), ("b".into(), 1100.0), ("c".into(), 1200.0)].into();
        let rates: BTreeMap<String, f64> = [("c".into(), 30.0)].into();
        let r = benchmark_report(&ReportInputs {
            systems: &systems,
            scores: &scores,
            gold: &[],
            elo: &elo,
            refusal_rates: &rates,
            refusal_threshold: 10.0,
        })
        .unwrap();
        assert_eq!(r.elo_rho, vec![Rho::Undefined(UndefinedReason::Constant)]);
        let cell = r.rows[0].cells[0].as_ref().unwrap();
        assert!((cell.mean - 0.6).abs() < 1e-12);
        assert!(r.rows[2].refusal_flag && !r.rows[0].refusal_flag);
        assert!(r.to_markdown().contains("c*"));
    }

    #[test]
    fn frequency_counts() {
        let names = vec!["pierogi".to_string(), "Bao".to_string()];
        assert_eq!(concept_frequency(Vec::<String>::new(), &names)["pierogi"], 0);
        let caps = [
            "Pierogi with onions",
            "a plate of PIEROGI",
            "dumplings",
            "homemade pierogi and bread",
            "baozi from a street stall",
        ];
        let m = concept_frequency(caps, &names);
        assert_eq!(m["pierogi"], 3);
        assert_eq!(m["Bao"], 1);
        let strict = ConceptCounter::new(&names, FrequencyOptions { word_boundary: true, ..Default::default() });
        assert_eq!(strict.count_captions(caps), vec![3, 0]);
    }

    #[test]
    fn tsv_shards_and_histogram() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.tsv"), "url\tcaption\nx\tpierogi here\ny\tnothing\n").unwrap();
        std::fs::write(dir.path().join("b.tsv"), "url\tcaption\nz\tPierogi again\n").unwrap();
        let files = corpus_files(&format!("{}/*.tsv", dir.path().display())).unwrap();
        let c = ConceptCounter::new(
            &["pierogi".into(), "url".into()],
            FrequencyOptions { word_boundary: false, format: CorpusFormat::Tsv { column: "caption".into() } },
        );
        let m = c.count_files(&files).unwrap();
        assert_eq!(m["pierogi"], 2);
        assert_eq!(m["url"], 0);
        let bins = log_histogram(&m);
        assert_eq!(bins[0].artifacts, 1);
        assert_eq!(bins[1].artifacts, 1);
        assert!(histogram_csv(&bins).starts_with("low,high,artifacts\n0,1,1\n"));
        assert!(histogram_svg(&bins).starts_with("<svg"));
    }

    proptest! {
        #[test]
        fn spearman_invariances(
            xs in prop::collection::vec(-100.0f64..100.0, 3..40),
            seed in prop::collection::vec(-100.0f64..100.0, 40),
        ) {
            let ys: Vec<f64> = seed[..xs.len()].to_vec();
            let r = spearman_rho(&xs, &ys).unwrap();
            let f: Vec<f64> = xs.iter().map(|x| x.powi(3) + 5.0 * x).collect();
            prop_assert_eq!(spearman_rho(&f, &ys).unwrap(), r);
            prop_assert_eq!(spearman_rho(&ys, &xs).unwrap(), r);
            let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
            match (r, spearman_rho(&xs, &neg).unwrap()) {
                (Rho::Defined(a), Rho::Defined(b)) => prop_assert!((a + b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn group_means_recompose(vals in prop::collection::vec(0.0f64..1.0, 4)) {
            let d = dataset();
            let names = ["jiaozi", "baozi", "pierogi", "kolach"];
            let pairs: Vec<(&str, f64)> = names.iter().copied().zip(vals.iter().copied()).collect();
            let global = vals.iter().sum::<f64>() / 4.0;
            for g in [GroupBy::Region, GroupBy::Supercategory, GroupBy::Continent, GroupBy::GlobalBucket] {
                let s = aggregate_scores(pairs.clone(), &d, g).unwrap();
                let weighted = s.iter().map(|x| x.mean * x.n as f64).sum::<f64>() / 4.0;
                prop_assert!((weighted - global).abs() < 1e-9);
            }
        }

        #[test]
        fn frequency_additive_over_shards(
            caps in prop::collection::vec("[a-c ]{0,12}", 0..30),
            split in 0usize..30,
        ) {
            let names = vec!["ab".to_string(), "c".to_string(), "b a".to_string()];
            let split = split.min(caps.len());
            let c = ConceptCounter::new(&names, FrequencyOptions::default());
            let all = c.count_captions(&caps);
            let a = c.count_captions(&caps[..split]);
            let b = c.count_captions(&caps[split..]);
            for i in 0..names.len() {
                prop_assert_eq!(all[i], a[i] + b[i]);
            }
        }
    }
}
